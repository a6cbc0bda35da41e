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

// DOEB: binary container for embeddings, prototypes, sampled batches and
// model checkpoints. Every integer is little-endian.
//
//   offset  size  field
//   0       4     magic "DOEB"
//   4       2     version u16 = 1
//   6       2     flags u16: bit0 labels, bit1 provenance, bit2 weights
//   8       8     count u64
//   16      4     dim u32
//   20      4     reserved u32 = 0
//   24      ...   payload: count x dim float32, row-major
//   then    labels      count x i32                                 (bit0)
//   then    provenance  count x {class_id i32, anchor i64, knn f64} (bit1)
//   then    weights     u32 tensor count; per tensor rank u32,
//                       dims u32[rank], float32 data               (bit2)
//
// Nothing may follow the last section.

#ifndef OODSYNTH_DOEB_HPP_
#define OODSYNTH_DOEB_HPP_

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "oodsynth/conditioned_space.hpp"
#include "oodsynth/detector.hpp"
#include "oodsynth/embeddings.hpp"
#include "oodsynth/knn_sampler.hpp"

namespace oodsynth::doeb {

inline constexpr char kMagic[4] = {'D', 'O', 'E', 'B'};
inline constexpr std::uint16_t kVersion = 1;
inline constexpr std::uint16_t kFlagLabels = 1u << 0;
inline constexpr std::uint16_t kFlagProvenance = 1u << 1;
inline constexpr std::uint16_t kFlagWeights = 1u << 2;
inline constexpr std::size_t kHeaderSize = 24;
inline constexpr std::size_t kProvenanceRecordSize = 20;

struct Provenance {
  std::int32_t class_id = 0;
  std::int64_t anchor_index = 0;
  double knn_distance = 0.0;

  bool operator==(const Provenance&) const = default;
};

struct Tensor {
  std::vector<std::uint32_t> dims;
  std::vector<float> data;

  bool operator==(const Tensor&) const = default;
};

struct File {
  std::uint64_t count = 0;
  std::uint32_t dim = 0;
  std::vector<float> payload;  // count * dim
  std::optional<std::vector<std::int32_t>> labels;
  std::optional<std::vector<Provenance>> provenance;
  std::optional<std::vector<Tensor>> weights;

  std::uint16_t flags() const;
  bool operator==(const File&) const = default;
};

std::vector<std::uint8_t> encode(const File& file);

// Throws FormatError naming the byte offset of the first problem.
File decode(std::span<const std::uint8_t> bytes);

// I/O failures throw IoError; malformed content throws FormatError.
File read(const std::filesystem::path& path);
void write(const std::filesystem::path& path, const File& file);

// Conversions between containers and domain types. Float32 storage means a
// double value survives a write/read cycle rounded to the nearest float.

File from_matrix(const EmbeddingMatrix& m);
EmbeddingMatrix to_matrix(const File& file);

File from_labeled(const LabeledFeatures& data);
LabeledFeatures to_labeled(const File& file);  // requires labels

File from_outliers(const OutlierBatch& batch);
OutlierBatch to_outliers(const File& file);  // requires provenance

// Payload holds the raw token embeddings T(y) = mu * ||T(y)||; reading
// renormalizes them.
File from_prototypes(const PrototypeBank& bank);
PrototypeBank to_prototypes(const File& file);

// count = 0, dim = output dim; weights: per layer a [out, in] weight tensor
// and an [out] bias tensor.
File from_head(const EncoderHead& head);
EncoderHead to_head(const File& file);

// count = 0, dim = classes; weights: tensor 0 is [1] holding beta, then the
// classifier layers, then the three phi layers.
File from_detector(const DetectorModel& model);
DetectorModel to_detector(const File& file);

}  // namespace oodsynth::doeb

#endif  // OODSYNTH_DOEB_HPP_
