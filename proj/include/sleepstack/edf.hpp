#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::edf {

struct TruncatedHeader : DataError {
  explicit TruncatedHeader(const std::string& m) : DataError("EDF: " + m) {}
};
struct MalformedField : DataError {
  explicit MalformedField(const std::string& m) : DataError("EDF: " + m) {}
};
struct ChannelNotFound : DataError {
  explicit ChannelNotFound(const std::string& m) : DataError("EDF: " + m) {}
};
struct TruncatedRecords : DataError {
  explicit TruncatedRecords(const std::string& m) : DataError("EDF: " + m) {}
};
struct UnknownStageString : DataError {
  explicit UnknownStageString(const std::string& m) : DataError("hypnogram: " + m) {}
};
struct OverlappingAnnotations : DataError {
  explicit OverlappingAnnotations(const std::string& m) : DataError("hypnogram: " + m) {}
};

struct SignalSpec {
  std::string label;          // 16 ASCII chars, trailing spaces trimmed
  std::string transducer;     // 80
  std::string physical_dim;   // 8
  double physical_min = 0.0;
  double physical_max = 0.0;
  int digital_min = 0;
  int digital_max = 0;
  std::string prefiltering;   // 80
  int samples_per_record = 0;
};

struct EdfHeader {
  std::string version;       // 8
  std::string patient_id;    // 80
  std::string recording_id;  // 80
  std::string start_date;    // dd.mm.yy
  std::string start_time;    // hh.mm.ss
  int header_bytes = 0;
  std::string reserved;      // 44 (EDF+ continuity marker lives here)
  long long num_records = 0;  // -1 = unknown until resolved against file size
  double record_duration_s = 0.0;
  int num_signals = 0;
  std::vector<SignalSpec> signals;

  size_t record_size_bytes() const {
    size_t n = 0;
    for (const auto& s : signals) n += static_cast<size_t>(s.samples_per_record) * 2;
    return n;
  }

  double sampling_rate(const SignalSpec& s) const {
    return static_cast<double>(s.samples_per_record) / record_duration_s;
  }
};

namespace detail {

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(' ');
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(' ');
  return s.substr(b, e - b + 1);
}

inline std::string field(std::span<const uint8_t> bytes, size_t off, size_t len) {
  return std::string(reinterpret_cast<const char*>(bytes.data()) + off, len);
}

inline long long parse_int(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw MalformedField(what + " is empty");
  size_t pos = 0;
  long long v = 0;
  try {
    v = std::stoll(s, &pos);
  } catch (const std::exception&) {
    throw MalformedField(what + " is not numeric: '" + s + "'");
  }
  if (pos != s.size()) throw MalformedField(what + " is not numeric: '" + s + "'");
  return v;
}

inline double parse_real(const std::string& raw, const std::string& what) {
  const std::string s = trim(raw);
  if (s.empty()) throw MalformedField(what + " is empty");
  size_t pos = 0;
  double v = 0.0;
  try {
    v = std::stod(s, &pos);
  } catch (const std::exception&) {
    throw MalformedField(what + " is not numeric: '" + s + "'");
  }
  if (pos != s.size()) throw MalformedField(what + " is not numeric: '" + s + "'");
  return v;
}

}  // namespace detail

// Parses the fixed 256-byte header plus the 256-byte-per-signal blocks.
// All fields are fixed-width ASCII; numeric garbage is a hard error.
inline EdfHeader parse_edf_header(std::span<const uint8_t> bytes) {
  using namespace detail;
  if (bytes.size() < 256)
    throw TruncatedHeader("need 256 bytes, have " + std::to_string(bytes.size()));
  EdfHeader h;
  h.version = trim(field(bytes, 0, 8));
  h.patient_id = trim(field(bytes, 8, 80));
  h.recording_id = trim(field(bytes, 88, 80));
  h.start_date = trim(field(bytes, 168, 8));
  h.start_time = trim(field(bytes, 176, 8));
  h.header_bytes = static_cast<int>(parse_int(field(bytes, 184, 8), "header bytes"));
  h.reserved = trim(field(bytes, 192, 44));
  h.num_records = parse_int(field(bytes, 236, 8), "number of records");
  h.record_duration_s = parse_real(field(bytes, 244, 8), "record duration");
  h.num_signals = static_cast<int>(parse_int(field(bytes, 252, 4), "number of signals"));

  if (h.num_signals < 1) throw MalformedField("number of signals must be >= 1");
  if (h.header_bytes != 256 + 256 * h.num_signals)
    throw MalformedField("header bytes field " + std::to_string(h.header_bytes) +
                         " != 256 + 256*" + std::to_string(h.num_signals));
  if (bytes.size() < static_cast<size_t>(h.header_bytes))
    throw TruncatedHeader("signal blocks truncated");
  if (h.num_records < 1 && h.num_records != -1)
    throw MalformedField("number of records must be >= 1 (or -1 while streaming)");
  if (!(h.record_duration_s > 0.0))
    throw MalformedField("record duration must be positive");

  const int ns = h.num_signals;
  const size_t base = 256;
  h.signals.resize(ns);
  for (int s = 0; s < ns; ++s) {
    auto& sp = h.signals[s];
    sp.label = trim(field(bytes, base + 16 * s, 16));
    sp.transducer = trim(field(bytes, base + 16 * ns + 80 * s, 80));
    sp.physical_dim = trim(field(bytes, base + 96 * ns + 8 * s, 8));
    sp.physical_min = parse_real(field(bytes, base + 104 * ns + 8 * s, 8), "physical min");
    sp.physical_max = parse_real(field(bytes, base + 112 * ns + 8 * s, 8), "physical max");
    sp.digital_min = static_cast<int>(parse_int(field(bytes, base + 120 * ns + 8 * s, 8), "digital min"));
    sp.digital_max = static_cast<int>(parse_int(field(bytes, base + 128 * ns + 8 * s, 8), "digital max"));
    sp.prefiltering = trim(field(bytes, base + 136 * ns + 80 * s, 80));
    sp.samples_per_record = static_cast<int>(
        parse_int(field(bytes, base + 216 * ns + 8 * s, 8), "samples per record"));
    if (sp.digital_min >= sp.digital_max)
      throw MalformedField("signal " + sp.label + ": digital_min >= digital_max");
    if (sp.physical_min == sp.physical_max)
      throw MalformedField("signal " + sp.label + ": physical_min == physical_max");
    if (sp.samples_per_record < 1)
      throw MalformedField("signal " + sp.label + ": samples per record < 1");
  }
  return h;
}

inline int find_signal(const EdfHeader& h, const std::string& label) {
  int found = -1;
  for (int s = 0; s < h.num_signals; ++s) {
    if (h.signals[s].label == label) {
      if (found >= 0) throw ChannelNotFound("label '" + label + "' is ambiguous");
      found = s;
    }
  }
  if (found < 0) throw ChannelNotFound("no signal labelled '" + label + "'");
  return found;
}

inline long long resolve_num_records(const EdfHeader& h, size_t file_size) {
  const size_t rec = h.record_size_bytes();
  if (h.num_records != -1) return h.num_records;
  if (file_size < static_cast<size_t>(h.header_bytes)) return 0;
  return static_cast<long long>((file_size - h.header_bytes) / rec);
}

// Concatenates the named channel across all data records and maps each
// 16-bit little-endian two's-complement sample to physical units.
inline std::vector<double> read_signal(std::span<const uint8_t> file,
                                       const EdfHeader& h,
                                       const std::string& channel_label) {
  const int sig = find_signal(h, channel_label);
  const auto& sp = h.signals[sig];
  const size_t rec_size = h.record_size_bytes();
  const long long n_rec = resolve_num_records(h, file.size());
  if (n_rec < 1) throw TruncatedRecords("no complete data records");
  if (file.size() < h.header_bytes + static_cast<size_t>(n_rec) * rec_size)
    throw TruncatedRecords("file holds fewer records than the header claims");

  size_t chan_off = 0;
  for (int s = 0; s < sig; ++s)
    chan_off += static_cast<size_t>(h.signals[s].samples_per_record) * 2;

  const double gain = (sp.physical_max - sp.physical_min) /
                      (static_cast<double>(sp.digital_max) - sp.digital_min);
  std::vector<double> out;
  out.reserve(static_cast<size_t>(n_rec) * sp.samples_per_record);
  for (long long r = 0; r < n_rec; ++r) {
    const uint8_t* p = file.data() + h.header_bytes + r * rec_size + chan_off;
    for (int i = 0; i < sp.samples_per_record; ++i) {
      const int16_t d = static_cast<int16_t>(
          static_cast<uint16_t>(p[2 * i]) | (static_cast<uint16_t>(p[2 * i + 1]) << 8));
      out.push_back(sp.physical_min + (d - sp.digital_min) * gain);
    }
  }
  return out;
}

// ---- hypnogram --------------------------------------------------------------

enum class Stage { W, S1, S2, S3, S4, REM, MVT, UNSCORED };

inline const char* stage_name(Stage s) {
  switch (s) {
    case Stage::W: return "W";
    case Stage::S1: return "S1";
    case Stage::S2: return "S2";
    case Stage::S3: return "S3";
    case Stage::S4: return "S4";
    case Stage::REM: return "REM";
    case Stage::MVT: return "MVT";
    case Stage::UNSCORED: return "UNSCORED";
  }
  return "?";
}

inline Stage stage_from_string(const std::string& s) {
  if (s == "Sleep stage W") return Stage::W;
  if (s == "Sleep stage 1") return Stage::S1;
  if (s == "Sleep stage 2") return Stage::S2;
  if (s == "Sleep stage 3") return Stage::S3;
  if (s == "Sleep stage 4") return Stage::S4;
  if (s == "Sleep stage R") return Stage::REM;
  if (s == "Movement time") return Stage::MVT;
  if (s == "Sleep stage ?") return Stage::UNSCORED;
  throw UnknownStageString("unknown stage string '" + s + "'");
}

struct HypnogramAnnotation {
  double onset_s = 0.0;
  double duration_s = 0.0;
  Stage stage = Stage::UNSCORED;
};

namespace detail {

inline void validate_annotation(const HypnogramAnnotation& a) {
  if (a.onset_s < 0.0) throw MalformedField("annotation onset < 0");
  if (!(a.duration_s > 0.0)) throw MalformedField("annotation duration must be > 0");
  // The corpus is scored in whole 30 s epochs; silently truncating an odd
  // duration would corrupt the epoch accounting, so reject instead.
  if (std::fmod(a.duration_s, 30.0) != 0.0)
    throw MalformedField("annotation duration " + std::to_string(a.duration_s) +
                         " is not a multiple of 30 s");
}

inline std::vector<HypnogramAnnotation> finish_annotations(
    std::vector<HypnogramAnnotation> anns) {
  std::stable_sort(anns.begin(), anns.end(),
                   [](const auto& a, const auto& b) { return a.onset_s < b.onset_s; });
  for (size_t i = 1; i < anns.size(); ++i) {
    if (anns[i].onset_s < anns[i - 1].onset_s + anns[i - 1].duration_s)
      throw OverlappingAnnotations(
          "annotations overlap at onset " + std::to_string(anns[i].onset_s));
  }
  return anns;
}

// One time-stamped annotation list: "+onset[\x15duration]\x14text\x14...\x00".
inline void parse_tal(const std::string& tal, std::vector<HypnogramAnnotation>& out) {
  const auto d14 = tal.find('\x14');
  if (d14 == std::string::npos) throw MalformedField("TAL without \\x14 separator");
  std::string timing = tal.substr(0, d14);
  double onset = 0.0, duration = -1.0;
  const auto d15 = timing.find('\x15');
  if (d15 != std::string::npos) {
    duration = parse_real(timing.substr(d15 + 1), "TAL duration");
    timing = timing.substr(0, d15);
  }
  if (timing.empty() || (timing[0] != '+' && timing[0] != '-'))
    throw MalformedField("TAL onset must start with + or -");
  onset = parse_real(timing, "TAL onset");

  size_t pos = d14 + 1;
  while (pos < tal.size()) {
    const auto next = tal.find('\x14', pos);
    if (next == std::string::npos) break;
    const std::string text = tal.substr(pos, next - pos);
    pos = next + 1;
    if (text.empty()) continue;  // timekeeping annotation
    if (duration < 0.0) throw MalformedField("stage annotation without duration");
    HypnogramAnnotation a{onset, duration, stage_from_string(text)};
    validate_annotation(a);
    out.push_back(a);
  }
}

}  // namespace detail

// Reads the "EDF Annotations" channel of an EDF+ file as a hypnogram.
inline std::vector<HypnogramAnnotation> parse_hypnogram_edf(
    std::span<const uint8_t> bytes) {
  const EdfHeader h = parse_edf_header(bytes);
  const int sig = find_signal(h, "EDF Annotations");
  const auto& sp = h.signals[sig];
  const size_t rec_size = h.record_size_bytes();
  const long long n_rec = resolve_num_records(h, bytes.size());
  if (bytes.size() < h.header_bytes + static_cast<size_t>(n_rec) * rec_size)
    throw TruncatedRecords("annotation records truncated");
  size_t chan_off = 0;
  for (int s = 0; s < sig; ++s)
    chan_off += static_cast<size_t>(h.signals[s].samples_per_record) * 2;

  std::vector<HypnogramAnnotation> anns;
  for (long long r = 0; r < n_rec; ++r) {
    const char* p = reinterpret_cast<const char*>(bytes.data()) + h.header_bytes +
                    r * rec_size + chan_off;
    const std::string block(p, static_cast<size_t>(sp.samples_per_record) * 2);
    size_t pos = 0;
    while (pos < block.size()) {
      const auto z = block.find('\0', pos);
      if (z == std::string::npos) break;
      if (z > pos) detail::parse_tal(block.substr(pos, z - pos), anns);
      pos = z + 1;
    }
  }
  return detail::finish_annotations(std::move(anns));
}

// Plain-text fallback: UTF-8 TSV with header "onset_s\tduration_s\tstage".
inline std::vector<HypnogramAnnotation> parse_hypnogram_tsv(const std::string& text) {
  std::vector<HypnogramAnnotation> anns;
  size_t pos = 0;
  bool first = true;
  while (pos < text.size()) {
    auto eol = text.find('\n', pos);
    if (eol == std::string::npos) eol = text.size();
    std::string line = text.substr(pos, eol - pos);
    pos = eol + 1;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    if (first) {
      first = false;
      if (line != "onset_s\tduration_s\tstage")
        throw MalformedField("TSV hypnogram must start with onset_s\\tduration_s\\tstage");
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 == std::string::npos ? t1 : t1 + 1);
    if (t1 == std::string::npos || t2 == std::string::npos)
      throw MalformedField("TSV row needs 3 columns: " + line);
    HypnogramAnnotation a;
    a.onset_s = detail::parse_real(line.substr(0, t1), "onset_s");
    a.duration_s = detail::parse_real(line.substr(t1 + 1, t2 - t1 - 1), "duration_s");
    a.stage = stage_from_string(line.substr(t2 + 1));
    detail::validate_annotation(a);
    anns.push_back(a);
  }
  if (first) throw MalformedField("empty TSV hypnogram");
  return detail::finish_annotations(std::move(anns));
}

// Accepts either source format; mirror copies of the dataset ship both.
inline std::vector<HypnogramAnnotation> parse_hypnogram(std::span<const uint8_t> bytes) {
  const std::string head(reinterpret_cast<const char*>(bytes.data()),
                         std::min<size_t>(bytes.size(), 24));
  if (head.rfind("onset_s\t", 0) == 0)
    return parse_hypnogram_tsv(
        std::string(reinterpret_cast<const char*>(bytes.data()), bytes.size()));
  return parse_hypnogram_edf(bytes);
}

}  // namespace sleepstack::edf
