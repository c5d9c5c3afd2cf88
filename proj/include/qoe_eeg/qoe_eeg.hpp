#pragma once

#include "qoe_eeg/error.hpp"
#include "qoe_eeg/rng.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/types.hpp"
#include "qoe_eeg/ingest.hpp"
#include "qoe_eeg/dsp.hpp"
#include "qoe_eeg/dataset.hpp"
#include "qoe_eeg/nn/tape.hpp"
#include "qoe_eeg/nn/model.hpp"
#include "qoe_eeg/nn/adam.hpp"
#include "qoe_eeg/nn/gradcheck.hpp"
#include "qoe_eeg/nn/checkpoint.hpp"
#include "qoe_eeg/train.hpp"
#include "qoe_eeg/report.hpp"
