#pragma once

#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "sleepstack/common.hpp"

namespace sleepstack::net {

struct InvalidArchitecture : DataError {
  explicit InvalidArchitecture(const std::string& m)
      : DataError("architecture spec: " + m) {}
};

enum class LayerKind {
  Input, Conv1D, BatchNorm, Scale, Activation, Dropout, Add, MaxPooling1D,
  Flatten, Dense
};

inline LayerKind layer_kind_from(const std::string& s) {
  if (s == "InputLayer") return LayerKind::Input;
  if (s == "Conv1D") return LayerKind::Conv1D;
  if (s == "BatchNorm") return LayerKind::BatchNorm;
  if (s == "Scale") return LayerKind::Scale;
  if (s == "Activation") return LayerKind::Activation;
  if (s == "Dropout") return LayerKind::Dropout;
  if (s == "Add") return LayerKind::Add;
  if (s == "MaxPooling1D") return LayerKind::MaxPooling1D;
  if (s == "Flatten") return LayerKind::Flatten;
  if (s == "Dense") return LayerKind::Dense;
  throw InvalidArchitecture("unknown layer kind '" + s + "'");
}

inline const char* layer_kind_name(LayerKind k) {
  switch (k) {
    case LayerKind::Input: return "InputLayer";
    case LayerKind::Conv1D: return "Conv1D";
    case LayerKind::BatchNorm: return "BatchNorm";
    case LayerKind::Scale: return "Scale";
    case LayerKind::Activation: return "Activation";
    case LayerKind::Dropout: return "Dropout";
    case LayerKind::Add: return "Add";
    case LayerKind::MaxPooling1D: return "MaxPooling1D";
    case LayerKind::Flatten: return "Flatten";
    case LayerKind::Dense: return "Dense";
  }
  return "?";
}

// One row of the architecture table. Width/channels/params mirror the
// published implementation table; kernel_size and has_bias are derived from
// the parameter count (the only kernel sizes in this net are 16 in the body
// and 1 in the shortcuts).
struct LayerRow {
  std::string name;
  LayerKind kind = LayerKind::Input;
  int width = 0;
  int channels = 0;      // 0 for Flatten/Dense rows, per the table convention
  long long params = 0;
  std::vector<std::string> inputs;
  std::vector<int> input_idx;

  int kernel_size = 0;   // Conv1D only
  bool has_bias = false; // Conv1D only (Dense always has bias)
  int in_channels = 0;   // Conv1D/Dense fan-in
};

class ArchitectureSpec {
public:
  std::vector<LayerRow> rows;
  int num_classes = 5;

  const LayerRow& row(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArchitecture("no layer named " + name);
    return rows[it->second];
  }
  int index_of(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw InvalidArchitecture("no layer named " + name);
    return static_cast<int>(it->second);
  }

  long long total_params() const {
    long long s = 0;
    for (const auto& r : rows) s += r.params;
    return s;
  }

  // Body convolutions have kernel 16; the pooling-block shortcuts have
  // kernel 1. Both counts are reported because the two published counts (34
  // layers in the text, 41 Conv1D rows in the table) disagree.
  int conv_count(int kernel) const {
    int n = 0;
    for (const auto& r : rows)
      if (r.kind == LayerKind::Conv1D && r.kernel_size == kernel) ++n;
    return n;
  }

  uint64_t fingerprint() const {
    uint64_t h = 0xcbf29ce484222325ull;
    for (const auto& r : rows) {
      std::ostringstream os;
      os << r.name << '|' << layer_kind_name(r.kind) << '|' << r.width << '|'
         << r.channels << '|' << r.params << '|';
      for (const auto& i : r.inputs) os << i << ';';
      os << '\n';
      h = fnv1a64(os.str(), h);
    }
    return h;
  }

  // Loads the table and re-derives every width and parameter count from the
  // wiring, refusing to build if any transcribed value disagrees.
  static ArchitectureSpec load(std::istream& in, int num_classes) {
    if (num_classes != 5 && num_classes != 6)
      throw InvalidArchitecture("num_classes must be 5 or 6");
    ArchitectureSpec spec;
    spec.num_classes = num_classes;
    std::string line;
    if (!std::getline(in, line)) throw InvalidArchitecture("empty file");
    while (std::getline(in, line)) {
      if (line.empty()) continue;
      if (!line.empty() && line.back() == '\r') line.pop_back();
      std::vector<std::string> f;
      std::stringstream ss(line);
      std::string tok;
      while (std::getline(ss, tok, ',')) f.push_back(tok);
      if (f.size() == 5) f.push_back("");
      if (f.size() != 6) throw InvalidArchitecture("bad row: " + line);
      LayerRow r;
      r.name = f[0];
      r.kind = layer_kind_from(f[1]);
      try {
        r.width = std::stoi(f[2]);
        r.channels = std::stoi(f[3]);
        r.params = std::stoll(f[4]);
      } catch (const std::exception&) {
        throw InvalidArchitecture("non-numeric field in row: " + line);
      }
      std::stringstream is(f[5]);
      while (std::getline(is, tok, ';'))
        if (!tok.empty()) r.inputs.push_back(tok);
      spec.rows.push_back(std::move(r));
    }
    spec.finalize();
    return spec;
  }

  static ArchitectureSpec load_file(const std::string& path, int num_classes) {
    std::ifstream in(path);
    if (!in) throw InvalidArchitecture("cannot open " + path);
    return load(in, num_classes);
  }

private:
  std::map<std::string, size_t> index_;

  void finalize() {
    index_.clear();
    for (size_t i = 0; i < rows.size(); ++i) {
      if (!index_.emplace(rows[i].name, i).second)
        throw InvalidArchitecture("duplicate layer " + rows[i].name);
    }
    for (size_t i = 0; i < rows.size(); ++i) {
      auto& r = rows[i];
      r.input_idx.clear();
      for (const auto& in : r.inputs) {
        const int j = index_of(in);
        if (j >= static_cast<int>(i))
          throw InvalidArchitecture(r.name + " consumes later row " + in);
        r.input_idx.push_back(j);
      }
      validate_row(r);
    }
    if (rows.empty() || rows.front().kind != LayerKind::Input)
      throw InvalidArchitecture("first row must be the input layer");
    if (rows.back().kind != LayerKind::Dense)
      throw InvalidArchitecture("last row must be the dense head");
  }

  void validate_row(LayerRow& r) {
    auto in0 = [&]() -> const LayerRow& { return rows[r.input_idx.at(0)]; };
    switch (r.kind) {
      case LayerKind::Input:
        if (!r.inputs.empty() || r.params != 0)
          throw InvalidArchitecture("bad input row");
        break;
      case LayerKind::Conv1D: {
        r.in_channels = in0().channels;
        if (r.width != in0().width)
          throw InvalidArchitecture(r.name + ": convolution must preserve width");
        const long long base16 = 16LL * r.in_channels * r.channels;
        const long long base1 = 1LL * r.in_channels * r.channels;
        if (r.params == base16) {
          r.kernel_size = 16;
        } else if (r.params == base16 + r.channels) {
          r.kernel_size = 16;
          r.has_bias = true;
        } else if (r.params == base1) {
          r.kernel_size = 1;
        } else if (r.params == base1 + r.channels) {
          r.kernel_size = 1;
          r.has_bias = true;
        } else {
          throw InvalidArchitecture(r.name + ": param count matches no kernel");
        }
        break;
      }
      case LayerKind::BatchNorm:
        if (r.params != 4LL * r.channels)
          throw InvalidArchitecture(r.name + ": batchnorm stores 4 values/channel");
        check_shape_matches(r, in0());
        break;
      case LayerKind::Scale:
        if (r.params != 2LL * r.channels)
          throw InvalidArchitecture(r.name + ": scale has 2 params/channel");
        check_shape_matches(r, in0());
        break;
      case LayerKind::Activation:
      case LayerKind::Dropout:
        if (r.params != 0) throw InvalidArchitecture(r.name + ": unexpected params");
        check_shape_matches(r, in0());
        break;
      case LayerKind::MaxPooling1D:
        if (r.width != in0().width / 2 || r.channels != in0().channels)
          throw InvalidArchitecture(r.name + ": pooling must halve width");
        break;
      case LayerKind::Add: {
        if (r.input_idx.size() != 2)
          throw InvalidArchitecture(r.name + ": add takes two inputs");
        for (int j : r.input_idx) {
          if (rows[j].width != r.width || rows[j].channels != r.channels)
            throw InvalidArchitecture(r.name + ": add input shape mismatch");
        }
        break;
      }
      case LayerKind::Flatten:
        if (r.width != in0().width * in0().channels)
          throw InvalidArchitecture(r.name + ": flatten width");
        break;
      case LayerKind::Dense: {
        r.in_channels = in0().width;
        // The table lists the 5-class head; a 6-class build widens it.
        if (r.params != static_cast<long long>(r.in_channels) * r.width + r.width)
          throw InvalidArchitecture(r.name + ": dense params");
        if (num_classes != r.width) {
          r.width = num_classes;
          r.params = static_cast<long long>(r.in_channels) * num_classes + num_classes;
        }
        r.has_bias = true;
        break;
      }
    }
  }

  static void check_shape_matches(const LayerRow& r, const LayerRow& in) {
    if (r.width != in.width || r.channels != in.channels)
      throw InvalidArchitecture(r.name + ": shape must match input");
  }
};

inline std::string default_arch_csv_path() {
#ifdef SLEEPSTACK_DATA_DIR
  return std::string(SLEEPSTACK_DATA_DIR) + "/arch_resnet34.csv";
#else
  return "data/arch_resnet34.csv";
#endif
}

}  // namespace sleepstack::net
