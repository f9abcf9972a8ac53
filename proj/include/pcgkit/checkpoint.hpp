#pragma once

// Checkpoint file: "PCGM", u16 version, u32 length + JSON blob (model spec and
// run metadata), u32 rows + float64 mean/stddev normalization table, u32 tensor
// count, then per tensor: u32 name length, name, u32 rank, u32 dims, float32
// payload. Little-endian throughout.

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pcgkit/features.hpp"
#include "pcgkit/models.hpp"

namespace pcgkit {

struct NamedTensor {
  std::string name;
  ag::Shape shape;
  std::vector<float> values;

  bool operator==(const NamedTensor&) const = default;
};

struct Checkpoint {
  ModelSpec spec;
  nlohmann::ordered_json meta = nlohmann::ordered_json::object();
  NormalizationProfile normalization;
  std::vector<NamedTensor> tensors;
};

inline constexpr std::uint16_t kCheckpointVersion = 1;

template <class T>
Checkpoint capture(const Model<T>& model, const NormalizationProfile& norm, nlohmann::ordered_json meta = {}) {
  Checkpoint ck;
  ck.spec = model.spec();
  ck.meta = meta.is_null() ? nlohmann::ordered_json::object() : std::move(meta);
  ck.normalization = norm;
  for (const auto* p : model.parameters()) {
    NamedTensor t{p->name, p->tensor.shape(), {}};
    t.values.assign(p->tensor.data().begin(), p->tensor.data().end());
    ck.tensors.push_back(std::move(t));
  }
  return ck;
}

/// Copies tensor values into a model built from the same spec.
template <class T>
void restore(Model<T>& model, const Checkpoint& ck) {
  auto params = model.parameters();
  if (params.size() != ck.tensors.size()) throw FormatError("checkpoint tensor count does not match the model");
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto& t = ck.tensors[i];
    if (t.name != params[i]->name || t.shape != params[i]->tensor.shape()) {
      throw FormatError("checkpoint tensor '" + t.name + "' does not match model parameter '" + params[i]->name + "'");
    }
    auto dst = params[i]->tensor.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = static_cast<T>(t.values[k]);
  }
}

template <class T = float>
Model<T> load_model(const Checkpoint& ck) {
  Model<T> m(ck.spec);
  restore(m, ck);
  return m;
}

inline std::string encode_checkpoint(const Checkpoint& ck) {
  std::string out = "PCGM";
  auto put = [&out](std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
  };
  put(kCheckpointVersion, 2);
  nlohmann::ordered_json blob;
  blob["model"] = to_json(ck.spec);
  blob["meta"] = ck.meta;
  const std::string text = blob.dump();
  put(text.size(), 4);
  out += text;
  put(ck.normalization.mean.size(), 4);
  for (const auto* vec : {&ck.normalization.mean, &ck.normalization.stddev}) {
    for (double d : *vec) {
      std::uint64_t raw;
      std::memcpy(&raw, &d, sizeof raw);
      put(raw, 8);
    }
  }
  put(ck.tensors.size(), 4);
  for (const auto& t : ck.tensors) {
    put(t.name.size(), 4);
    out += t.name;
    put(t.shape.size(), 4);
    for (auto d : t.shape) put(d, 4);
    for (float f : t.values) {
      std::uint32_t raw;
      std::memcpy(&raw, &f, sizeof raw);
      put(raw, 4);
    }
  }
  return out;
}

inline Checkpoint decode_checkpoint(std::string_view bytes) {
  std::size_t pos = 0;
  auto get = [&](int n) -> std::uint64_t {
    if (pos + static_cast<std::size_t>(n) > bytes.size()) throw FormatError("truncated checkpoint");
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(bytes[pos + i])) << (8 * i);
    pos += static_cast<std::size_t>(n);
    return v;
  };
  auto get_str = [&](std::size_t n) {
    if (pos + n > bytes.size()) throw FormatError("truncated checkpoint");
    std::string s(bytes.substr(pos, n));
    pos += n;
    return s;
  };
  if (bytes.substr(0, 4) != "PCGM") throw FormatError("checkpoint: bad magic");
  pos = 4;
  if (get(2) != kCheckpointVersion) throw FormatError("checkpoint: unsupported version");
  Checkpoint ck;
  try {
    const auto blob = nlohmann::ordered_json::parse(get_str(get(4)));
    ck.spec = model_spec_from_json(blob.at("model"));
    ck.meta = blob.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint header: ") + e.what());
  }
  const auto rows = get(4);
  for (auto* vec : {&ck.normalization.mean, &ck.normalization.stddev}) {
    vec->resize(rows);
    for (auto& d : *vec) {
      const std::uint64_t raw = get(8);
      std::memcpy(&d, &raw, sizeof d);
    }
  }
  const auto count = get(4);
  for (std::uint64_t i = 0; i < count; ++i) {
    NamedTensor t;
    t.name = get_str(get(4));
    const auto rank = get(4);
    for (std::uint64_t r = 0; r < rank; ++r) t.shape.push_back(get(4));
    t.values.resize(ag::numel(t.shape));
    for (auto& f : t.values) {
      const auto raw = static_cast<std::uint32_t>(get(4));
      std::memcpy(&f, &raw, sizeof f);
    }
    ck.tensors.push_back(std::move(t));
  }
  if (pos != bytes.size()) throw FormatError("checkpoint: trailing bytes");
  return ck;
}

inline void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write " + path.string());
  const auto img = encode_checkpoint(ck);
  out.write(img.data(), static_cast<std::streamsize>(img.size()));
}

inline Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

}  // namespace pcgkit
