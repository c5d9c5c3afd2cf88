#pragma once

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <span>
#include <string>
#include <vector>

#include <unsupported/Eigen/FFT>

#include "qoe_eeg/error.hpp"
#include "qoe_eeg/ingest.hpp"
#include "qoe_eeg/io.hpp"
#include "qoe_eeg/types.hpp"

namespace qoe::dsp {

inline constexpr std::string_view kModule = "dsp";

struct FrequencyBand {
  std::string name;
  double low = 0.0;
  double high = 0.0;
};

// Gamma is clamped to the 47 Hz preprocessing cutoff; everything above it has
// already been attenuated by the bandpass.
inline std::vector<FrequencyBand> canonical_bands() {
  return {{"delta", 1.0, 4.0}, {"theta", 4.0, 8.0}, {"alpha", 8.0, 13.0}, {"beta", 13.0, 30.0}, {"gamma", 30.0, 47.0}};
}

// ---------------------------------------------------------------------------
// Filtering

struct Biquad {
  double b0 = 1.0, b1 = 0.0, b2 = 0.0;
  double a1 = 0.0, a2 = 0.0;

  std::complex<double> response(std::complex<double> z_inv) const {
    const auto z2 = z_inv * z_inv;
    return (b0 + b1 * z_inv + b2 * z2) / (1.0 + a1 * z_inv + a2 * z2);
  }
};

struct IirFilter {
  std::vector<Biquad> sections;
  double low = 0.0;
  double high = 0.0;
  int order = 0;
  double sample_rate = 0.0;

  /// Complex response of the cascade at `freq` Hz.
  std::complex<double> response(double freq) const {
    const double w = 2.0 * std::numbers::pi * freq / sample_rate;
    const std::complex<double> z_inv = std::polar(1.0, -w);
    std::complex<double> h = 1.0;
    for (const auto& s : sections) h *= s.response(z_inv);
    return h;
  }

  double magnitude(double freq) const { return std::abs(response(freq)); }

  io::json metadata() const {
    return {{"family", "butterworth"}, {"low_hz", low},         {"high_hz", high},
            {"order", order},          {"sample_rate_hz", sample_rate}, {"sections", sections.size()},
            {"application", "zero-phase"}};
  }
};

/// Digital Butterworth bandpass of prototype order `order`, realised as
/// `order` second-order sections (total filter order 2*order). The analog
/// prototype is frequency-prewarped so the -3 dB points land exactly on
/// `low` and `high` after the bilinear transform.
inline IirFilter design_bandpass(double low, double high, int order, double sample_rate) {
  if (!(sample_rate > 0.0)) throw Error(kModule, ErrorCode::InvalidBand, "sample_rate must be > 0");
  const double nyquist = sample_rate / 2.0;
  if (!(low > 0.0 && low < high && high < nyquist))
    throw Error(kModule, ErrorCode::InvalidBand,
                "need 0 < low < high < nyquist, got low=" + io::format_double(low) +
                    " high=" + io::format_double(high) + " nyquist=" + io::format_double(nyquist));
  if (order != 2 && order != 4 && order != 6 && order != 8)
    throw Error(kModule, ErrorCode::InvalidBand, "order must be one of 2, 4, 6, 8");

  using cd = std::complex<double>;
  const double fs2 = 2.0 * sample_rate;
  const double w_low = fs2 * std::tan(std::numbers::pi * low / sample_rate);
  const double w_high = fs2 * std::tan(std::numbers::pi * high / sample_rate);
  const double bw = w_high - w_low;
  const double w0_sq = w_low * w_high;

  // Prototype poles on the left half of the unit circle; lowpass -> bandpass
  // maps each to a pair, the bilinear transform maps those into the z plane.
  std::vector<cd> zpoles;
  cd denom = 1.0;
  for (int k = 0; k < order; ++k) {
    const cd p = std::polar(1.0, std::numbers::pi * (2.0 * k + order + 1) / (2.0 * order));
    const cd half = p * (bw / 2.0);
    const cd root = std::sqrt(half * half - w0_sq);
    for (const cd s : {half + root, half - root}) {
      zpoles.push_back((fs2 + s) / (fs2 - s));
      denom *= fs2 - s;
    }
  }
  // Digital gain: bw^n * fs2^n / prod(fs2 - s_k) over all 2n analog poles.
  const double gain = std::pow(bw * fs2, order) / denom.real();

  std::vector<cd> upper;
  for (const auto& z : zpoles)
    if (z.imag() > 0.0) upper.push_back(z);
  if (static_cast<int>(upper.size()) != order)
    throw Error(kModule, ErrorCode::UnstableDesign, "pole pairing failed; band too narrow for this order");
  // Poles closest to the unit circle go last, where their high Q sees the
  // already-smoothed output of the earlier sections.
  std::sort(upper.begin(), upper.end(), [](const cd& a, const cd& b) { return std::abs(a) < std::abs(b); });

  IirFilter f;
  f.low = low;
  f.high = high;
  f.order = order;
  f.sample_rate = sample_rate;
  if (!(gain > 0.0) || !std::isfinite(gain)) throw Error(kModule, ErrorCode::UnstableDesign, "non-positive gain");
  const double section_gain = std::pow(gain, 1.0 / order);
  for (const auto& p : upper) {
    if (!(std::abs(p) < 1.0)) throw Error(kModule, ErrorCode::UnstableDesign, "pole on or outside the unit circle");
    Biquad s;
    // Zeros at z = +1 and z = -1.
    s.b0 = section_gain;
    s.b1 = 0.0;
    s.b2 = -section_gain;
    s.a1 = -2.0 * p.real();
    s.a2 = std::norm(p);
    f.sections.push_back(s);
  }
  return f;
}

namespace detail {

// Direct form II transposed, in place.
inline void sosfilt(const std::vector<Biquad>& sections, std::vector<double>& x,
                    const std::vector<std::array<double, 2>>& zi) {
  for (std::size_t s = 0; s < sections.size(); ++s) {
    const Biquad& q = sections[s];
    double z1 = zi[s][0], z2 = zi[s][1];
    for (double& v : x) {
      const double in = v;
      const double out = q.b0 * in + z1;
      z1 = q.b1 * in - q.a1 * out + z2;
      z2 = q.b2 * in - q.a2 * out;
      v = out;
    }
  }
}

// Steady-state section states for a unit step, cascaded through the DC gains
// of preceding sections.
inline std::vector<std::array<double, 2>> step_states(const std::vector<Biquad>& sections, double scale_in) {
  std::vector<std::array<double, 2>> zi(sections.size());
  double scale = scale_in;
  for (std::size_t s = 0; s < sections.size(); ++s) {
    const Biquad& q = sections[s];
    const double g = (q.b0 + q.b1 + q.b2) / (1.0 + q.a1 + q.a2);
    const double z2 = q.b2 - q.a2 * g;
    const double z1 = q.b1 - q.a1 * g + z2;
    zi[s] = {scale * z1, scale * z2};
    scale *= g;
  }
  return zi;
}

}  // namespace detail

inline std::size_t zero_phase_padding(const IirFilter& filter) { return 3 * filter.sections.size() * 2; }

/// Forward-backward filtering with odd-reflection edge padding and
/// steady-state initial conditions. Net phase is zero and the effective
/// magnitude response is |H|^2.
inline std::vector<double> apply_zero_phase(const IirFilter& filter, std::span<const double> signal) {
  const std::size_t pad = zero_phase_padding(filter);
  const std::size_t n = signal.size();
  if (n <= pad)
    throw Error(kModule, ErrorCode::TooShort,
                "signal of " + std::to_string(n) + " samples needs more than " + std::to_string(pad));

  std::vector<double> ext(n + 2 * pad);
  const double first = signal.front();
  const double last = signal.back();
  for (std::size_t i = 0; i < pad; ++i) ext[i] = 2.0 * first - signal[pad - i];
  std::copy(signal.begin(), signal.end(), ext.begin() + static_cast<std::ptrdiff_t>(pad));
  for (std::size_t i = 0; i < pad; ++i) ext[pad + n + i] = 2.0 * last - signal[n - 2 - i];

  detail::sosfilt(filter.sections, ext, detail::step_states(filter.sections, ext.front()));
  std::reverse(ext.begin(), ext.end());
  detail::sosfilt(filter.sections, ext, detail::step_states(filter.sections, ext.front()));
  std::reverse(ext.begin(), ext.end());

  return {ext.begin() + static_cast<std::ptrdiff_t>(pad), ext.begin() + static_cast<std::ptrdiff_t>(pad + n)};
}

/// Filters every channel of a recording.
inline ingest::RawRecording preprocess(const ingest::RawRecording& rec, const IirFilter& filter) {
  ingest::RawRecording out = rec;
  for (Eigen::Index c = 0; c < rec.samples.rows(); ++c) {
    const auto row = rec.samples.row(c);
    const auto y = apply_zero_phase(filter, std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
    out.samples.row(c) = Eigen::Map<const Eigen::RowVectorXd>(y.data(), static_cast<Eigen::Index>(y.size()));
  }
  return out;
}

// ---------------------------------------------------------------------------
// Spectral estimation

enum class Taper { Hann, Rectangular };

inline std::string to_string(Taper t) { return t == Taper::Hann ? "hann" : "rectangular"; }

inline Taper parse_taper(std::string_view s) {
  if (s == "hann") return Taper::Hann;
  if (s == "rectangular" || s == "boxcar") return Taper::Rectangular;
  throw Error(kModule, ErrorCode::InvalidBand, "unknown taper " + std::string(s));
}

struct WindowPlan {
  std::size_t window_len = 750;       // W = 3 s
  std::size_t hop = 375;              // H = W / 2
  std::size_t welch_subsegment = 250; // 1 s -> 1 Hz resolution
  double welch_overlap = 0.5;
  Taper taper = Taper::Hann;

  static WindowPlan for_rate(double sample_rate) {
    WindowPlan p;
    p.window_len = static_cast<std::size_t>(std::llround(3.0 * sample_rate));
    p.hop = p.window_len / 2;
    p.welch_subsegment = static_cast<std::size_t>(std::llround(sample_rate));
    return p;
  }

  void validate(double sample_rate) const {
    if (window_len != static_cast<std::size_t>(std::llround(3.0 * sample_rate)) || hop != window_len / 2)
      throw Error(kModule, ErrorCode::InvalidBand, "window plan must use W = 3 s and H = W/2");
    if (welch_subsegment < 2 || welch_subsegment > window_len)
      throw Error(kModule, ErrorCode::InvalidBand, "welch sub-segment must be in [2, W]");
    if (!(welch_overlap >= 0.0 && welch_overlap < 1.0))
      throw Error(kModule, ErrorCode::InvalidBand, "welch overlap must be in [0, 1)");
  }

  io::json to_json() const {
    return {{"window_len", window_len},   {"hop", hop},           {"welch_subsegment", welch_subsegment},
            {"welch_overlap", welch_overlap}, {"taper", to_string(taper)}};
  }
};

struct PsdEstimate {
  std::vector<double> frequencies;  // Hz, ascending from 0
  std::vector<double> density;      // uV^2 / Hz
  double resolution = 0.0;

  // Rectangle-rule total power; equals the detrended variance for a
  // stationary input.
  double total_power() const {
    double s = 0.0;
    for (double d : density) s += d * resolution;
    return s;
  }
};

inline std::vector<double> taper_window(Taper taper, std::size_t n) {
  std::vector<double> w(n, 1.0);
  if (taper == Taper::Hann)
    for (std::size_t i = 0; i < n; ++i)
      w[i] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * static_cast<double>(i) / static_cast<double>(n));
  return w;
}

/// Welch estimate: mean of tapered, mean-removed periodograms over
/// sub-segments stepping by (1 - overlap) of their length. Trailing samples
/// that do not fill a sub-segment are ignored. One-sided density scaling.
inline PsdEstimate welch_psd(std::span<const double> segment, double sample_rate, const WindowPlan& plan) {
  const std::size_t nper = plan.welch_subsegment;
  if (nper < 2 || segment.size() < nper)
    throw Error(kModule, ErrorCode::SegmentTooShort,
                "segment of " + std::to_string(segment.size()) + " samples shorter than sub-segment " +
                    std::to_string(nper));
  const auto noverlap = static_cast<std::size_t>(std::floor(plan.welch_overlap * static_cast<double>(nper)));
  const std::size_t step = std::max<std::size_t>(1, nper - noverlap);
  const std::size_t nseg = (segment.size() - nper) / step + 1;

  const auto window = taper_window(plan.taper, nper);
  double window_power = 0.0;
  for (double w : window) window_power += w * w;
  const double scale = 1.0 / (sample_rate * window_power);

  const std::size_t nbins = nper / 2 + 1;
  PsdEstimate psd;
  psd.resolution = sample_rate / static_cast<double>(nper);
  psd.frequencies.resize(nbins);
  for (std::size_t k = 0; k < nbins; ++k) psd.frequencies[k] = static_cast<double>(k) * psd.resolution;
  psd.density.assign(nbins, 0.0);

  Eigen::FFT<double> fft;
  std::vector<double> buf(nper);
  std::vector<std::complex<double>> spec;
  for (std::size_t s = 0; s < nseg; ++s) {
    const auto* src = segment.data() + s * step;
    double mean = 0.0;
    for (std::size_t i = 0; i < nper; ++i) mean += src[i];
    mean /= static_cast<double>(nper);
    for (std::size_t i = 0; i < nper; ++i) buf[i] = (src[i] - mean) * window[i];
    fft.fwd(spec, buf);
    for (std::size_t k = 0; k < nbins; ++k) {
      double p = std::norm(spec[k]) * scale;
      const bool unpaired = (k == 0) || (nper % 2 == 0 && k == nper / 2);
      if (!unpaired) p *= 2.0;
      psd.density[k] += p;
    }
  }
  for (double& d : psd.density) d /= static_cast<double>(nseg);
  return psd;
}

/// Trapezoidal integral of the density over [low, high], interpolating
/// linearly where an edge falls between grid points. Integrals over
/// contiguous bands add up to the integral over their union.
inline double integrate(const PsdEstimate& psd, double low, double high) {
  const auto& f = psd.frequencies;
  const auto& d = psd.density;
  if (f.size() < 2 || low < f.front() || high > f.back() || !(low <= high))
    throw Error(kModule, ErrorCode::BandOutOfRange,
                "[" + io::format_double(low) + ", " + io::format_double(high) + "] Hz outside PSD range [" +
                    io::format_double(f.empty() ? 0.0 : f.front()) + ", " +
                    io::format_double(f.empty() ? 0.0 : f.back()) + "]");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < f.size(); ++i) {
    const double a = std::max(low, f[i]);
    const double b = std::min(high, f[i + 1]);
    if (b <= a) continue;
    const double span = f[i + 1] - f[i];
    const double da = d[i] + (d[i + 1] - d[i]) * (a - f[i]) / span;
    const double db = d[i] + (d[i + 1] - d[i]) * (b - f[i]) / span;
    total += 0.5 * (da + db) * (b - a);
  }
  return std::max(total, 0.0);
}

inline double band_power(const PsdEstimate& psd, const FrequencyBand& band) {
  return integrate(psd, band.low, band.high);
}

inline constexpr double kDefaultDeFloor = 1e-12;

/// Differential entropy of a Gaussian with the given variance, in nats.
inline double differential_entropy(double variance, double floor = kDefaultDeFloor) {
  return 0.5 * std::log(2.0 * std::numbers::pi * std::numbers::e * std::max(variance, floor));
}

// ---------------------------------------------------------------------------
// Feature extraction

struct FeatureTensor {
  std::string subject_id;
  std::string video_id;
  Matrix values;  // T x 80

  std::size_t rows() const { return static_cast<std::size_t>(values.rows()); }
  std::string id() const { return subject_id + "/" + video_id; }
};

enum class FeatureKind { Psd = 0, De = 1 };

constexpr std::size_t column_index(std::size_t electrode, std::size_t band, FeatureKind kind) {
  return electrode * kNumBands * kNumKinds + band * kNumKinds + static_cast<std::size_t>(kind);
}

inline std::string column_name(std::size_t col, const std::vector<FrequencyBand>& bands = canonical_bands()) {
  const std::size_t e = col / (kNumBands * kNumKinds);
  const std::size_t b = (col / kNumKinds) % kNumBands;
  const bool de = col % kNumKinds == 1;
  return std::string(kElectrodes[e]) + "_" + bands[b].name + (de ? "_de" : "_psd");
}

/// Window starts k*H for every k with at least H samples remaining.
inline std::vector<std::size_t> window_starts(std::size_t num_samples, const WindowPlan& plan) {
  std::vector<std::size_t> starts;
  for (std::size_t s = 0; s + plan.hop <= num_samples; s += plan.hop) starts.push_back(s);
  return starts;
}

/// Windowed PSD + DE features of an already bandpass-filtered recording.
/// Windows are W long, advance by H, and the last one may be truncated to
/// as few as H samples. Column layout: electrode*10 + band*2 + kind.
inline FeatureTensor extract_features(const ingest::RawRecording& rec, const WindowPlan& plan,
                                      const std::vector<FrequencyBand>& bands = canonical_bands(),
                                      double de_floor = kDefaultDeFloor) {
  plan.validate(rec.sample_rate);
  if (bands.size() != kNumBands) throw Error(kModule, ErrorCode::InvalidBand, "expected five bands");
  if (rec.samples.rows() != static_cast<Eigen::Index>(kNumElectrodes))
    throw Error(kModule, ErrorCode::TooShort, "recording must carry the eight canonical channels");
  const std::size_t n = rec.num_samples();
  if (n < plan.window_len)
    throw Error(kModule, ErrorCode::TooShort,
                rec.id() + ": " + std::to_string(n) + " samples, need at least " + std::to_string(plan.window_len));
  if (plan.hop < plan.welch_subsegment)
    throw Error(kModule, ErrorCode::TooShort, "hop shorter than the welch sub-segment; final window unusable");

  const auto starts = window_starts(n, plan);
  FeatureTensor ft;
  ft.subject_id = rec.subject_id;
  ft.video_id = rec.video_id;
  ft.values.resize(static_cast<Eigen::Index>(starts.size()), static_cast<Eigen::Index>(kFeatureWidth));
  for (std::size_t e = 0; e < kNumElectrodes; ++e) {
    const double* channel = rec.samples.row(static_cast<Eigen::Index>(e)).data();
    for (std::size_t t = 0; t < starts.size(); ++t) {
      const std::size_t len = std::min(plan.window_len, n - starts[t]);
      const auto psd = welch_psd(std::span<const double>(channel + starts[t], len), rec.sample_rate, plan);
      for (std::size_t b = 0; b < kNumBands; ++b) {
        const double p = band_power(psd, bands[b]);
        ft.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(column_index(e, b, FeatureKind::Psd))) = p;
        ft.values(static_cast<Eigen::Index>(t), static_cast<Eigen::Index>(column_index(e, b, FeatureKind::De))) =
            differential_entropy(p, de_floor);
      }
    }
  }
  return ft;
}

inline io::json bands_to_json(const std::vector<FrequencyBand>& bands) {
  io::json arr = io::json::array();
  for (const auto& b : bands) arr.push_back({{"name", b.name}, {"low_hz", b.low}, {"high_hz", b.high}});
  return arr;
}

inline void write_features(const io::fs::path& path, const FeatureTensor& ft, const WindowPlan& plan,
                           const IirFilter& filter, const std::vector<FrequencyBand>& bands = canonical_bands()) {
  std::string out;
  for (std::size_t c = 0; c < kFeatureWidth; ++c) {
    if (c) out += ',';
    out += column_name(c, bands);
  }
  out += '\n';
  for (Eigen::Index t = 0; t < ft.values.rows(); ++t) {
    for (Eigen::Index c = 0; c < ft.values.cols(); ++c) {
      if (c) out += ',';
      out += io::format_double(ft.values(t, c));
    }
    out += '\n';
  }
  io::write_atomic(path, out);
  io::json meta = {{"subject_id", ft.subject_id}, {"video_id", ft.video_id},          {"T", ft.rows()},
                   {"plan", plan.to_json()},      {"band_table", bands_to_json(bands)}, {"filter_metadata", filter.metadata()}};
  io::write_json(ingest::sidecar_path(path), meta);
}

inline FeatureTensor load_features(const io::fs::path& path) {
  const auto meta = io::read_json(ingest::sidecar_path(path), kModule);
  FeatureTensor ft;
  try {
    ft.subject_id = meta.at("subject_id").get<std::string>();
    ft.video_id = meta.at("video_id").get<std::string>();
  } catch (const io::json::exception& e) {
    throw Error(kModule, ErrorCode::BadMetadata, path.string() + ": " + e.what());
  }
  const std::string text = io::read_text(path, kModule);
  const auto rows = io::lines(text);
  if (rows.empty()) throw Error(kModule, ErrorCode::MalformedRow, path.string() + ": empty feature file");
  const auto header = io::split(rows[0], ',');
  const std::size_t width = header.size();
  ft.values.resize(static_cast<Eigen::Index>(rows.size() - 1), static_cast<Eigen::Index>(width));
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto fields = io::split(rows[r], ',');
    if (fields.size() != width)
      throw Error(kModule, ErrorCode::MalformedRow, path.string() + ": ragged row " + std::to_string(r + 1));
    for (std::size_t c = 0; c < width; ++c) {
      const auto v = io::parse_double(fields[c]);
      if (!v) throw Error(kModule, ErrorCode::MalformedRow, path.string() + ": bad value at row " + std::to_string(r + 1));
      ft.values(static_cast<Eigen::Index>(r - 1), static_cast<Eigen::Index>(c)) = *v;
    }
  }
  if (meta.contains("T") && meta["T"].get<std::size_t>() != ft.rows())
    throw Error(kModule, ErrorCode::BadMetadata, path.string() + ": sidecar T disagrees with row count");
  return ft;
}

}  // namespace qoe::dsp
