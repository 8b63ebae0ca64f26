#pragma once

#include <cstring>
#include <fstream>
#include <map>

#include <json.hpp>

#include "sleepstack/epochs.hpp"

namespace sleepstack::data {

struct CorruptStore : DataError {
  explicit CorruptStore(const std::string& m) : DataError("epoch store: " + m) {}
};

// Binary epoch store. Fixed-size records (ids padded to 16 bytes) give O(1)
// random access for shuffled training without re-parsing EDF; a JSON sidecar
// carries the index and class accounting.
inline constexpr char kStoreMagic[8] = {'S', 'L', 'P', 'S', 'T', 'O', 'R', '1'};
inline constexpr uint32_t kStoreVersion = 1;
inline constexpr size_t kStoreIdBytes = 16;
inline constexpr size_t kStoreRecordBytes =
    2 * kStoreIdBytes + 1 + 1 + 2 + 4 + kEpochSamples * 4;

inline std::string store_sidecar_path(const std::string& path) { return path + ".json"; }

inline void write_store(const std::string& path, const std::vector<Epoch>& epochs,
                        const LabelScheme& scheme) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write store " + path);
  out.write(kStoreMagic, 8);
  const uint32_t version = kStoreVersion;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const uint8_t classes = static_cast<uint8_t>(scheme.num_classes());
  out.write(reinterpret_cast<const char*>(&classes), 1);
  char pad3[3] = {0, 0, 0};
  out.write(pad3, 3);
  const uint64_t count = epochs.size();
  out.write(reinterpret_cast<const char*>(&count), 8);

  std::vector<char> rec(kStoreRecordBytes);
  std::map<std::string, nlohmann::json> recordings;
  for (const auto& e : epochs) {
    if (e.recording_id.size() >= kStoreIdBytes || e.subject_id.size() >= kStoreIdBytes)
      throw DataError("id too long for store record: " + e.recording_id);
    if (e.samples.size() != kEpochSamples)
      throw DataError("epoch must hold exactly 3000 samples");
    std::memset(rec.data(), 0, rec.size());
    std::memcpy(rec.data(), e.recording_id.data(), e.recording_id.size());
    std::memcpy(rec.data() + kStoreIdBytes, e.subject_id.data(), e.subject_id.size());
    rec[2 * kStoreIdBytes] = e.subset == Subset::SC ? 0 : 1;
    rec[2 * kStoreIdBytes + 1] = static_cast<char>(e.label);
    const uint32_t pos = static_cast<uint32_t>(e.position_index);
    std::memcpy(rec.data() + 2 * kStoreIdBytes + 4, &pos, 4);
    std::memcpy(rec.data() + 2 * kStoreIdBytes + 8, e.samples.data(),
                kEpochSamples * 4);
    out.write(rec.data(), static_cast<std::streamsize>(rec.size()));

    auto& r = recordings[e.recording_id];
    r["subject"] = e.subject_id;
    r["subset"] = subset_name(e.subset);
    r["epochs"] = r.value("epochs", 0) + 1;
  }
  if (!out) throw DataError("short write to " + path);
  out.close();

  nlohmann::json side;
  side["version"] = kStoreVersion;
  side["classes"] = scheme.num_classes();
  side["count"] = count;
  side["class_counts"] = class_counts(epochs, scheme.num_classes());
  nlohmann::json recs = nlohmann::json::object();
  for (auto& [id, j] : recordings) recs[id] = j;
  side["recordings"] = recs;
  std::ofstream sout(store_sidecar_path(path), std::ios::trunc);
  if (!sout) throw DataError("cannot write store sidecar");
  sout << side.dump(2) << "\n";
}

struct StoreContents {
  LabelScheme scheme;
  std::vector<Epoch> epochs;
};

inline StoreContents read_store(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open store " + path);
  char magic[8];
  if (!in.read(magic, 8) || std::memcmp(magic, kStoreMagic, 8) != 0)
    throw CorruptStore("bad magic");
  uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  if (version != kStoreVersion) throw CorruptStore("unsupported version");
  uint8_t classes = 0;
  in.read(reinterpret_cast<char*>(&classes), 1);
  in.ignore(3);
  uint64_t count = 0;
  in.read(reinterpret_cast<char*>(&count), 8);
  if (!in) throw CorruptStore("truncated header");

  StoreContents c;
  c.scheme = LabelScheme::from_classes(classes);
  c.epochs.reserve(count);
  std::vector<char> rec(kStoreRecordBytes);
  for (uint64_t i = 0; i < count; ++i) {
    if (!in.read(rec.data(), static_cast<std::streamsize>(rec.size())))
      throw CorruptStore("truncated at record " + std::to_string(i));
    Epoch e;
    e.recording_id = std::string(rec.data(), strnlen(rec.data(), kStoreIdBytes));
    e.subject_id = std::string(rec.data() + kStoreIdBytes,
                               strnlen(rec.data() + kStoreIdBytes, kStoreIdBytes));
    e.subset = rec[2 * kStoreIdBytes] == 0 ? Subset::SC : Subset::ST;
    e.label = static_cast<int>(rec[2 * kStoreIdBytes + 1]);
    if (e.label < 0 || e.label >= classes)
      throw CorruptStore("label out of range at record " + std::to_string(i));
    uint32_t pos = 0;
    std::memcpy(&pos, rec.data() + 2 * kStoreIdBytes + 4, 4);
    e.position_index = static_cast<int>(pos);
    e.samples.resize(kEpochSamples);
    std::memcpy(e.samples.data(), rec.data() + 2 * kStoreIdBytes + 8,
                kEpochSamples * 4);
    c.epochs.push_back(std::move(e));
  }
  return c;
}

}  // namespace sleepstack::data
