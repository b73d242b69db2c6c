// SPDX-License-Identifier: Apache-2.0

#include "evae/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "evae/errors.hpp"

namespace evae {

namespace {

constexpr char kMagic[8] = {'E', 'V', 'A', 'E', 'C', 'K', 'P', 'T'};

static_assert(std::endian::native == std::endian::little, "container I/O assumes a little-endian host");

template <typename T>
void put(std::vector<std::uint8_t>& out, T v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& off) {
  if (off + sizeof(T) > in.size()) throw LengthError("container truncated");
  T v;
  std::memcpy(&v, in.data() + off, sizeof(T));
  off += sizeof(T);
  return v;
}

Tensor tensor_of(const DenseLayer& l, bool bias) {
  return bias ? Tensor::from_matrix(Matrix(l.b)) : Tensor::from_matrix(l.W);
}

}  // namespace

std::vector<std::uint8_t> encode_container(const TensorFile& f) {
  nlohmann::json header;
  header["kind"] = f.kind;
  header["meta"] = f.meta;
  header["tensors"] = nlohmann::json::array();
  for (const auto& [name, t] : f.tensors) {
    header["tensors"].push_back({{"name", name}, {"shape", t.shape}});
  }
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kMagic, kMagic + 8);
  put<std::uint32_t>(out, kContainerVersion);
  put<std::uint64_t>(out, text.size());
  out.insert(out.end(), text.begin(), text.end());
  for (const auto& [name, t] : f.tensors) {
    const auto* p = reinterpret_cast<const std::uint8_t*>(t.data.data());
    out.insert(out.end(), p, p + t.data.size() * sizeof(double));
  }
  return out;
}

TensorFile decode_container(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20) throw LengthError("container shorter than its fixed header");
  if (std::memcmp(bytes.data(), kMagic, 8) != 0) throw FormatError("not an EVAECKPT container (bad magic)");
  std::size_t off = 8;
  const auto version = get<std::uint32_t>(bytes, off);
  if (version != kContainerVersion) {
    throw FormatError("unsupported container version " + std::to_string(version));
  }
  const auto hlen = get<std::uint64_t>(bytes, off);
  if (off + hlen > bytes.size()) throw LengthError("container header truncated");
  const std::string text(reinterpret_cast<const char*>(bytes.data() + off), hlen);
  off += hlen;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("container header is not valid JSON: ") + e.what());
  }
  TensorFile f;
  f.kind = header.at("kind").get<std::string>();
  f.meta = header.at("meta");
  for (const auto& entry : header.at("tensors")) {
    Tensor t;
    t.shape = entry.at("shape").get<std::vector<std::size_t>>();
    std::size_t n = 1;
    for (auto s : t.shape) n *= s;
    if (off + n * sizeof(double) > bytes.size()) throw LengthError("container tensor data truncated");
    t.data.resize(n);
    std::memcpy(t.data.data(), bytes.data() + off, n * sizeof(double));
    off += n * sizeof(double);
    f.tensors.emplace_back(entry.at("name").get<std::string>(), std::move(t));
  }
  if (off != bytes.size()) throw FormatError("container has " + std::to_string(bytes.size() - off) + " trailing bytes");
  return f;
}

void write_container(const std::filesystem::path& path, const TensorFile& f) {
  const auto bytes = encode_container(f);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorFile read_container(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  const std::vector<std::uint8_t> bytes{std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
  return decode_container(bytes);
}

TensorFile checkpoint_to_container(const Model& model, std::uint64_t seed, int epoch) {
  TensorFile f;
  f.kind = "model";
  f.meta["model"] = model.config;
  f.meta["seed"] = seed;
  f.meta["epoch"] = epoch;
  Model copy = model;
  const auto names = copy.param_names();
  const auto spans = copy.params();
  // Recover shapes by walking the same order as params().
  std::vector<Tensor> tensors;
  for (const auto& n : copy.nets) {
    auto add = [&](const DenseLayer& l) {
      if (l.W.size() > 0) tensors.push_back(tensor_of(l, false));
      if (l.b.size() > 0) tensors.push_back(tensor_of(l, true));
    };
    for (const auto& l : n.encoder.layers) add(l);
    add(n.head_mu);
    add(n.head_logvar);
    for (const auto& l : n.decoder.layers) add(l);
    add(n.out_mu);
    add(n.out_logvar);
  }
  if (tensors.size() != names.size() || spans.size() != names.size()) {
    throw StateError("checkpoint: parameter enumeration mismatch");
  }
  for (std::size_t i = 0; i < names.size(); ++i) f.tensors.emplace_back(names[i], std::move(tensors[i]));
  return f;
}

Checkpoint checkpoint_from_container(const TensorFile& f) {
  if (f.kind != "model") throw FormatError("container kind '" + f.kind + "' is not a model checkpoint");
  Checkpoint c;
  try {
    c.model = Model::zeros(f.meta.at("model").get<ModelConfig>());
    c.seed = f.meta.at("seed").get<std::uint64_t>();
    c.epoch = f.meta.at("epoch").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("checkpoint metadata: ") + e.what());
  }
  const auto names = c.model.param_names();
  auto spans = c.model.params();
  if (names.size() != f.tensors.size()) {
    throw FormatError("checkpoint holds " + std::to_string(f.tensors.size()) + " tensors, model expects " +
                      std::to_string(names.size()));
  }
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto& [name, t] = f.tensors[i];
    if (name != names[i]) throw FormatError("checkpoint tensor '" + name + "' where '" + names[i] + "' expected");
    if (t.data.size() != spans[i].size()) throw FormatError("checkpoint tensor '" + name + "' has wrong size");
    std::copy(t.data.begin(), t.data.end(), spans[i].begin());
  }
  return c;
}

void save_checkpoint(const std::filesystem::path& path, const Model& model, std::uint64_t seed, int epoch) {
  write_container(path, checkpoint_to_container(model, seed, epoch));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return checkpoint_from_container(read_container(path)); }

void save_dataset_cache(const std::filesystem::path& path, const Dataset& d) {
  TensorFile f;
  f.kind = "dataset";
  f.meta["image_rows"] = d.image_rows;
  f.meta["image_cols"] = d.image_cols;
  f.meta["split"] = d.split;
  f.meta["provenance"] = d.provenance;
  f.tensors.emplace_back("X", Tensor::from_matrix(d.X));
  std::vector<double> labels(d.labels.begin(), d.labels.end());
  f.tensors.emplace_back("labels", Tensor({labels.size()}, labels));
  write_container(path, f);
}

Dataset load_dataset_cache(const std::filesystem::path& path) {
  const TensorFile f = read_container(path);
  if (f.kind != "dataset" || f.tensors.size() != 2) throw FormatError("container is not a dataset cache");
  Dataset d;
  d.image_rows = f.meta.at("image_rows").get<int>();
  d.image_cols = f.meta.at("image_cols").get<int>();
  d.split = f.meta.at("split").get<std::string>();
  d.provenance = f.meta.at("provenance").get<std::string>();
  d.X = f.tensors[0].second.to_matrix();
  for (double v : f.tensors[1].second.data) d.labels.push_back(static_cast<int>(v));
  d.validate();
  return d;
}

}  // namespace evae
