/*
 * Copyright 2026 The oodsynth Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "oodsynth/doeb.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <limits>

#include "oodsynth/error.hpp"

namespace oodsynth::doeb {
namespace {

class ByteWriter {
 public:
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u16(std::uint16_t v) { le(v, 2); }
  void u32(std::uint32_t v) { le(v, 4); }
  void u64(std::uint64_t v) { le(v, 8); }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  void le(std::uint64_t v, int bytes) {
    for (int i = 0; i < bytes; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  std::vector<std::uint8_t> out_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return bytes_.size() - pos_; }

  void need(std::size_t n, const char* what) const {
    if (remaining() < n) {
      throw FormatError(std::string("truncated ") + what + ": need " + std::to_string(n) +
                            " bytes, " + std::to_string(remaining()) + " left",
                        pos_);
    }
  }

  std::uint16_t u16(const char* what) { return static_cast<std::uint16_t>(le(2, what)); }
  std::uint32_t u32(const char* what) { return static_cast<std::uint32_t>(le(4, what)); }
  std::uint64_t u64(const char* what) { return le(8, what); }
  std::int32_t i32(const char* what) { return static_cast<std::int32_t>(u32(what)); }
  std::int64_t i64(const char* what) { return static_cast<std::int64_t>(u64(what)); }
  double f64(const char* what) { return std::bit_cast<double>(u64(what)); }

  float finite_f32(const char* what) {
    const std::size_t at = pos_;
    const float v = std::bit_cast<float>(u32(what));
    if (!std::isfinite(v)) throw FormatError(std::string("non-finite value in ") + what, at);
    return v;
  }

  const std::uint8_t* raw(std::size_t n, const char* what) {
    need(n, what);
    const std::uint8_t* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }

 private:
  std::uint64_t le(int n, const char* what) {
    need(static_cast<std::size_t>(n), what);
    std::uint64_t v = 0;
    for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

// a * b, or nullopt on overflow of size_t.
std::optional<std::size_t> checked_mul(std::uint64_t a, std::uint64_t b) {
  if (a != 0 && b > std::numeric_limits<std::size_t>::max() / a) return std::nullopt;
  return static_cast<std::size_t>(a * b);
}

Tensor tensor_of(std::vector<std::uint32_t> dims, std::span<const double> values) {
  Tensor t;
  t.dims = std::move(dims);
  t.data.reserve(values.size());
  for (const double v : values) t.data.push_back(static_cast<float>(v));
  return t;
}

std::vector<double> widen(const std::vector<float>& v) { return {v.begin(), v.end()}; }

void append_layers(const Mlp& net, std::vector<Tensor>& out) {
  for (std::size_t l = 0; l < net.layer_count(); ++l) {
    const auto in = static_cast<std::uint32_t>(net.widths()[l]);
    const auto o = static_cast<std::uint32_t>(net.widths()[l + 1]);
    out.push_back(tensor_of({o, in}, net.weight(l)));
    out.push_back(tensor_of({o}, net.bias(l)));
  }
}

// Rebuilds an Mlp from weight/bias tensor pairs [first, last).
Mlp layers_to_mlp(const std::vector<Tensor>& tensors, std::size_t first, std::size_t last) {
  if (first >= last || (last - first) % 2 != 0) {
    throw IoError("DOEB weights: expected (weight, bias) tensor pairs");
  }
  std::vector<std::size_t> widths;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;
  for (std::size_t t = first; t < last; t += 2) {
    const Tensor& w = tensors[t];
    const Tensor& b = tensors[t + 1];
    if (w.dims.size() != 2 || b.dims.size() != 1 || b.dims[0] != w.dims[0]) {
      throw IoError("DOEB weights: tensor " + std::to_string(t) + " is not an [out, in] / [out] pair");
    }
    if (widths.empty()) {
      widths.push_back(w.dims[1]);
    } else if (widths.back() != w.dims[1]) {
      throw IoError("DOEB weights: layer input width mismatch at tensor " + std::to_string(t));
    }
    widths.push_back(w.dims[0]);
    weights.push_back(widen(w.data));
    biases.push_back(widen(b.data));
  }
  return Mlp::from_layers(weights, biases, widths);
}

}  // namespace

std::uint16_t File::flags() const {
  std::uint16_t f = 0;
  if (labels) f |= kFlagLabels;
  if (provenance) f |= kFlagProvenance;
  if (weights) f |= kFlagWeights;
  return f;
}

std::vector<std::uint8_t> encode(const File& file) {
  if (file.payload.size() != file.count * static_cast<std::uint64_t>(file.dim)) {
    throw std::invalid_argument("DOEB encode: payload size does not equal count * dim");
  }
  if (file.labels && file.labels->size() != file.count) {
    throw std::invalid_argument("DOEB encode: label count does not equal count");
  }
  if (file.provenance && file.provenance->size() != file.count) {
    throw std::invalid_argument("DOEB encode: provenance count does not equal count");
  }
  ByteWriter w;
  for (const char c : kMagic) w.u8(static_cast<std::uint8_t>(c));
  w.u16(kVersion);
  w.u16(file.flags());
  w.u64(file.count);
  w.u32(file.dim);
  w.u32(0);
  for (const float v : file.payload) w.f32(v);
  if (file.labels) {
    for (const auto y : *file.labels) w.i32(y);
  }
  if (file.provenance) {
    for (const auto& p : *file.provenance) {
      w.i32(p.class_id);
      w.i64(p.anchor_index);
      w.f64(p.knn_distance);
    }
  }
  if (file.weights) {
    w.u32(static_cast<std::uint32_t>(file.weights->size()));
    for (const auto& t : *file.weights) {
      std::uint64_t elements = 1;
      w.u32(static_cast<std::uint32_t>(t.dims.size()));
      for (const auto d : t.dims) {
        w.u32(d);
        elements *= d;
      }
      if (elements != t.data.size()) {
        throw std::invalid_argument("DOEB encode: tensor data size does not match its dims");
      }
      for (const float v : t.data) w.f32(v);
    }
  }
  return w.take();
}

File decode(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  const std::uint8_t* magic = r.raw(4, "magic");
  if (std::memcmp(magic, kMagic, 4) != 0) throw FormatError("bad magic bytes, expected \"DOEB\"", 0);
  const std::size_t version_at = r.offset();
  const std::uint16_t version = r.u16("version");
  if (version != kVersion) {
    throw FormatError("unsupported version " + std::to_string(version), version_at);
  }
  const std::size_t flags_at = r.offset();
  const std::uint16_t flags = r.u16("flags");
  if ((flags & ~(kFlagLabels | kFlagProvenance | kFlagWeights)) != 0) {
    throw FormatError("unknown flag bits set", flags_at);
  }
  File file;
  file.count = r.u64("count");
  file.dim = r.u32("dim");
  const std::size_t reserved_at = r.offset();
  if (r.u32("reserved") != 0) throw FormatError("reserved field must be zero", reserved_at);

  const auto elements = checked_mul(file.count, file.dim);
  if (!elements || *elements > r.remaining() / 4) {
    throw FormatError("payload of " + std::to_string(file.count) + " x " +
                          std::to_string(file.dim) + " float32 exceeds the file size",
                      r.offset());
  }
  file.payload.resize(*elements);
  for (auto& v : file.payload) v = r.finite_f32("payload");

  if (flags & kFlagLabels) {
    if (file.count > r.remaining() / 4) throw FormatError("truncated labels", r.offset());
    std::vector<std::int32_t> labels(static_cast<std::size_t>(file.count));
    for (auto& y : labels) y = r.i32("labels");
    file.labels = std::move(labels);
  }
  if (flags & kFlagProvenance) {
    if (file.count > r.remaining() / kProvenanceRecordSize) {
      throw FormatError("truncated provenance", r.offset());
    }
    std::vector<Provenance> prov(static_cast<std::size_t>(file.count));
    for (auto& p : prov) {
      p.class_id = r.i32("provenance class_id");
      p.anchor_index = r.i64("provenance anchor_index");
      p.knn_distance = r.f64("provenance knn_distance");
    }
    file.provenance = std::move(prov);
  }
  if (flags & kFlagWeights) {
    const std::uint32_t tensors = r.u32("tensor count");
    std::vector<Tensor> weights;
    for (std::uint32_t t = 0; t < tensors; ++t) {
      Tensor tensor;
      const std::uint32_t rank = r.u32("tensor rank");
      if (rank > r.remaining() / 4) throw FormatError("truncated tensor dims", r.offset());
      std::size_t size = 1;
      for (std::uint32_t d = 0; d < rank; ++d) {
        tensor.dims.push_back(r.u32("tensor dim"));
        const auto next = checked_mul(size, tensor.dims.back());
        if (!next) throw FormatError("tensor element count overflows", r.offset());
        size = *next;
      }
      if (size > r.remaining() / 4) {
        throw FormatError("tensor " + std::to_string(t) + " data exceeds the file size", r.offset());
      }
      tensor.data.resize(size);
      for (auto& v : tensor.data) v = r.finite_f32("tensor data");
      weights.push_back(std::move(tensor));
    }
    file.weights = std::move(weights);
  }
  if (r.remaining() != 0) {
    throw FormatError(std::to_string(r.remaining()) + " trailing bytes after the last section",
                      r.offset());
  }
  return file;
}

File read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string() + " for reading");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("error reading " + path.string());
  try {
    return decode(bytes);
  } catch (const FormatError& e) {
    throw FormatError(path.string() + ": " + e.what(), e.offset());
  }
}

void write(const std::filesystem::path& path, const File& file) {
  const auto bytes = encode(file);
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string());
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("error writing " + path.string());
}

File from_matrix(const EmbeddingMatrix& m) {
  File f;
  f.count = m.rows();
  f.dim = static_cast<std::uint32_t>(m.cols());
  f.payload.reserve(m.data().size());
  for (const double v : m.data()) f.payload.push_back(static_cast<float>(v));
  return f;
}

EmbeddingMatrix to_matrix(const File& file) {
  return EmbeddingMatrix(static_cast<std::size_t>(file.count), file.dim, widen(file.payload));
}

File from_labeled(const LabeledFeatures& data) {
  File f = from_matrix(data.features);
  f.labels = std::vector<std::int32_t>(data.labels.begin(), data.labels.end());
  return f;
}

LabeledFeatures to_labeled(const File& file) {
  if (!file.labels) throw IoError("DOEB file has no labels section");
  LabeledFeatures out;
  out.features = to_matrix(file);
  out.labels.assign(file.labels->begin(), file.labels->end());
  return out;
}

File from_outliers(const OutlierBatch& batch) {
  File f = from_matrix(batch.embeddings);
  std::vector<Provenance> prov(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    prov[i] = {batch.class_id[i], batch.anchor_index[i], batch.knn_distance[i]};
  }
  f.provenance = std::move(prov);
  return f;
}

OutlierBatch to_outliers(const File& file) {
  if (!file.provenance) throw IoError("DOEB file has no provenance section");
  OutlierBatch out;
  out.embeddings = to_matrix(file);
  for (const auto& p : *file.provenance) {
    out.class_id.push_back(p.class_id);
    out.anchor_index.push_back(p.anchor_index);
    out.knn_distance.push_back(p.knn_distance);
  }
  return out;
}

File from_prototypes(const PrototypeBank& bank) { return from_matrix(bank.token_embeddings()); }

PrototypeBank to_prototypes(const File& file) { return PrototypeBank(to_matrix(file)); }

File from_head(const EncoderHead& head) {
  File f;
  f.dim = static_cast<std::uint32_t>(head.output_dim());
  std::vector<Tensor> tensors;
  append_layers(head.net(), tensors);
  f.weights = std::move(tensors);
  return f;
}

EncoderHead to_head(const File& file) {
  if (!file.weights) throw IoError("DOEB file has no weights section");
  EncoderHead head(layers_to_mlp(*file.weights, 0, file.weights->size()));
  if (head.output_dim() != file.dim) throw IoError("DOEB head: dim field disagrees with last layer");
  return head;
}

File from_detector(const DetectorModel& model) {
  File f;
  f.dim = static_cast<std::uint32_t>(model.classifier.output_dim());
  std::vector<Tensor> tensors;
  const double beta[1] = {model.beta};
  tensors.push_back(tensor_of({1}, beta));
  append_layers(model.classifier, tensors);
  append_layers(model.phi, tensors);
  f.weights = std::move(tensors);
  return f;
}

DetectorModel to_detector(const File& file) {
  if (!file.weights) throw IoError("DOEB file has no weights section");
  const auto& t = *file.weights;
  constexpr std::size_t kPhiTensors = 6;
  if (t.size() < 1 + 2 + kPhiTensors || t[0].dims != std::vector<std::uint32_t>{1}) {
    throw IoError("DOEB detector: expected [beta] tensor, classifier layers and three phi layers");
  }
  DetectorModel model;
  model.beta = t[0].data[0];
  model.classifier = layers_to_mlp(t, 1, t.size() - kPhiTensors);
  model.phi = layers_to_mlp(t, t.size() - kPhiTensors, t.size());
  model.validate();
  if (model.classifier.output_dim() != file.dim) {
    throw IoError("DOEB detector: dim field disagrees with classifier output");
  }
  return model;
}

}  // namespace oodsynth::doeb
