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

#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "oodsynth/doeb.hpp"
#include "oodsynth/error.hpp"
#include "test_support.hpp"

namespace oodsynth::doeb {
namespace {

namespace fs = std::filesystem;

std::vector<std::uint8_t> le_bytes(std::uint64_t v, int n) {
  std::vector<std::uint8_t> out;
  for (int i = 0; i < n; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  return out;
}

void put(std::vector<std::uint8_t>& out, std::uint64_t v, int n) {
  const auto b = le_bytes(v, n);
  out.insert(out.end(), b.begin(), b.end());
}

void put_f32(std::vector<std::uint8_t>& out, float v) {
  std::uint32_t bits = 0;
  std::memcpy(&bits, &v, 4);
  put(out, bits, 4);
}

// Header built by hand, independent of the encoder.
std::vector<std::uint8_t> header(std::uint16_t flags, std::uint64_t count, std::uint32_t dim) {
  std::vector<std::uint8_t> out{'D', 'O', 'E', 'B'};
  put(out, 1, 2);
  put(out, flags, 2);
  put(out, count, 8);
  put(out, dim, 4);
  put(out, 0, 4);
  return out;
}

File random_file(Rng& rng) {
  File f;
  f.count = rng.below(6);
  f.dim = static_cast<std::uint32_t>(rng.below(5));
  for (std::uint64_t i = 0; i < f.count * f.dim; ++i) f.payload.push_back(static_cast<float>(rng.normal()));
  if (rng.below(2) == 1) {
    f.labels.emplace();
    for (std::uint64_t i = 0; i < f.count; ++i) f.labels->push_back(static_cast<std::int32_t>(rng.below(9)) - 1);
  }
  if (rng.below(2) == 1) {
    f.provenance.emplace();
    for (std::uint64_t i = 0; i < f.count; ++i) {
      f.provenance->push_back({static_cast<std::int32_t>(rng.below(5)),
                               static_cast<std::int64_t>(rng.below(1u << 20)) - 1, rng.uniform(0.0, 3.0)});
    }
  }
  if (rng.below(2) == 1) {
    f.weights.emplace();
    const std::size_t tensors = rng.below(4);
    for (std::size_t t = 0; t < tensors; ++t) {
      Tensor tensor;
      std::size_t size = 1;
      const std::size_t rank = rng.below(3);
      for (std::size_t r = 0; r < rank; ++r) {
        tensor.dims.push_back(static_cast<std::uint32_t>(rng.below(4)));
        size *= tensor.dims.back();
      }
      for (std::size_t i = 0; i < size; ++i) tensor.data.push_back(static_cast<float>(rng.normal()));
      f.weights->push_back(std::move(tensor));
    }
  }
  return f;
}

std::size_t offset_of_failure(const std::vector<std::uint8_t>& bytes) {
  try {
    decode(bytes);
  } catch (const FormatError& e) {
    return e.offset();
  }
  ADD_FAILURE() << "decode accepted malformed input";
  return std::numeric_limits<std::size_t>::max();
}

TEST(Doeb, HeaderLayoutMatchesHandBuiltBytes) {
  File f;
  f.count = 2;
  f.dim = 1;
  f.payload = {1.5f, -2.0f};
  f.labels = std::vector<std::int32_t>{3, -1};
  auto expected = header(kFlagLabels, 2, 1);
  put_f32(expected, 1.5f);
  put_f32(expected, -2.0f);
  put(expected, 3, 4);
  put(expected, 0xFFFFFFFFu, 4);
  EXPECT_EQ(encode(f), expected);
  EXPECT_EQ(decode(expected), f);
}

TEST(Doeb, ProvenanceAndWeightsLayout) {
  File f;
  f.count = 1;
  f.dim = 1;
  f.payload = {0.25f};
  f.provenance = std::vector<Provenance>{{7, -1, 0.5}};
  f.weights = std::vector<Tensor>{{{2}, {1.0f, 2.0f}}};
  auto expected = header(kFlagProvenance | kFlagWeights, 1, 1);
  put_f32(expected, 0.25f);
  put(expected, 7, 4);
  put(expected, 0xFFFFFFFFFFFFFFFFull, 8);
  std::uint64_t half = 0;
  const double h = 0.5;
  std::memcpy(&half, &h, 8);
  put(expected, half, 8);
  put(expected, 1, 4);  // tensor count
  put(expected, 1, 4);  // rank
  put(expected, 2, 4);  // dim
  put_f32(expected, 1.0f);
  put_f32(expected, 2.0f);
  EXPECT_EQ(encode(f), expected);
  EXPECT_EQ(expected.size(), kHeaderSize + 4 + kProvenanceRecordSize + 4 + 4 + 4 + 8);
}

TEST(Doeb, RandomRoundTrips) {
  Rng rng(1);
  for (int trial = 0; trial < 300; ++trial) {
    const auto f = random_file(rng);
    const auto bytes = encode(f);
    const auto back = decode(bytes);
    EXPECT_EQ(back, f);
    EXPECT_EQ(encode(back), bytes);
  }
}

TEST(Doeb, FileRoundTripIsByteIdentical) {
  const fs::path dir = fs::temp_directory_path() / "oodsynth_doeb_test";
  fs::create_directories(dir);
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const auto f = random_file(rng);
    write(dir / "a.doeb", f);
    write(dir / "b.doeb", read(dir / "a.doeb"));
    std::ifstream a(dir / "a.doeb", std::ios::binary);
    std::ifstream b(dir / "b.doeb", std::ios::binary);
    const std::vector<char> ab((std::istreambuf_iterator<char>(a)), std::istreambuf_iterator<char>());
    const std::vector<char> bb((std::istreambuf_iterator<char>(b)), std::istreambuf_iterator<char>());
    EXPECT_EQ(ab, bb);
  }
  EXPECT_THROW(read(dir / "missing.doeb"), IoError);
  fs::remove_all(dir);
}

TEST(Doeb, MalformedInputsNameTheOffset) {
  File f;
  f.count = 2;
  f.dim = 2;
  f.payload = {1, 2, 3, 4};
  f.labels = std::vector<std::int32_t>{0, 1};
  const auto good = encode(f);

  auto bad = good;
  bad[0] = 'X';
  EXPECT_EQ(offset_of_failure(bad), 0u);

  bad = good;
  bad[4] = 2;
  EXPECT_EQ(offset_of_failure(bad), 4u);

  bad = good;
  bad[6] |= 0x08;
  EXPECT_EQ(offset_of_failure(bad), 6u);

  bad = good;
  bad[21] = 1;
  EXPECT_EQ(offset_of_failure(bad), 20u);

  bad = good;
  const float nan = std::numeric_limits<float>::quiet_NaN();
  std::memcpy(bad.data() + kHeaderSize + 8, &nan, 4);
  EXPECT_EQ(offset_of_failure(bad), kHeaderSize + 8);

  bad = good;
  const float inf = std::numeric_limits<float>::infinity();
  std::memcpy(bad.data() + kHeaderSize + 12, &inf, 4);
  EXPECT_EQ(offset_of_failure(bad), kHeaderSize + 12);

  bad = good;
  bad.push_back(0);
  EXPECT_EQ(offset_of_failure(bad), good.size());

  bad.assign(good.begin(), good.begin() + 10);
  EXPECT_EQ(offset_of_failure(bad), 8u);

  bad.assign(good.begin(), good.begin() + 2);
  EXPECT_EQ(offset_of_failure(bad), 0u);

  // payload claims more rows than the file holds
  bad = good;
  bad[8] = 200;
  EXPECT_EQ(offset_of_failure(bad), kHeaderSize);

  // labels cut short
  bad.assign(good.begin(), good.end() - 2);
  EXPECT_EQ(offset_of_failure(bad), kHeaderSize + 16);
}

TEST(Doeb, HugeDimensionsDoNotAllocate) {
  auto bytes = header(0, std::numeric_limits<std::uint64_t>::max(), 0xFFFFFFFFu);
  EXPECT_EQ(offset_of_failure(bytes), kHeaderSize);
  bytes = header(kFlagWeights, 0, 0);
  put(bytes, 1, 4);
  put(bytes, 3, 4);
  put(bytes, 0xFFFFFFFFu, 4);
  put(bytes, 0xFFFFFFFFu, 4);
  put(bytes, 0xFFFFFFFFu, 4);
  EXPECT_THROW(decode(bytes), FormatError);
}

TEST(Doeb, EncodeChecksShapes) {
  File f;
  f.count = 2;
  f.dim = 2;
  f.payload = {1, 2, 3};
  EXPECT_THROW(encode(f), std::invalid_argument);
  f.payload.push_back(4);
  f.labels = std::vector<std::int32_t>{1};
  EXPECT_THROW(encode(f), std::invalid_argument);
}

TEST(DoebConvert, MatrixRoundsToFloat) {
  Rng rng(3);
  const auto m = testing_support::random_matrix(rng, 5, 3);
  const auto back = to_matrix(decode(encode(from_matrix(m))));
  ASSERT_EQ(back.rows(), 5u);
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 3; ++j) EXPECT_EQ(back(i, j), static_cast<double>(static_cast<float>(m(i, j))));
  }
}

TEST(DoebConvert, LabeledAndOutliers) {
  Rng rng(4);
  const auto d = testing_support::random_labeled(rng, 7, 3, 4);
  const auto back = to_labeled(decode(encode(from_labeled(d))));
  EXPECT_EQ(back.labels, d.labels);
  EXPECT_THROW(to_labeled(from_matrix(d.features)), IoError);

  OutlierBatch b;
  b.append(std::vector<double>{0.5, 0.25}, 2, 17, 0.125);
  b.append(std::vector<double>{1.0, -1.0}, 0, -1, 3.0);
  EXPECT_EQ(to_outliers(decode(encode(from_outliers(b)))), b);
  EXPECT_THROW(to_outliers(from_matrix(b.embeddings)), IoError);
}

TEST(DoebConvert, PrototypesKeepTokenNorms) {
  const PrototypeBank bank(EmbeddingMatrix::from_rows({{3.0, 4.0}, {0.0, 0.5}}));
  const auto back = to_prototypes(decode(encode(from_prototypes(bank))));
  EXPECT_DOUBLE_EQ(back.original_norm(0), 5.0);
  EXPECT_DOUBLE_EQ(back.original_norm(1), 0.5);
  EXPECT_TRUE(back.prototypes().is_unit_normalized(1e-12));
}

TEST(DoebConvert, HeadCheckpoint) {
  Rng rng(5);
  const auto head = EncoderHead::create(4, {6, 5}, 3, rng);
  const auto f = from_head(head);
  EXPECT_EQ(f.count, 0u);
  EXPECT_EQ(f.dim, 3u);
  ASSERT_TRUE(f.weights);
  EXPECT_EQ(f.weights->size(), 6u);
  EXPECT_EQ((*f.weights)[0].dims, (std::vector<std::uint32_t>{6, 4}));
  const auto back = to_head(decode(encode(f)));
  EXPECT_EQ(back.net().widths(), head.net().widths());
  const auto p = head.net().parameters();
  const auto q = back.net().parameters();
  for (std::size_t i = 0; i < p.size(); ++i) EXPECT_EQ(q[i], static_cast<double>(static_cast<float>(p[i])));
  // a second cycle is exact
  EXPECT_EQ(to_head(from_head(back)), back);
}

TEST(DoebConvert, DetectorCheckpoint) {
  Rng rng(6);
  const auto model = DetectorModel::create(8, {16, 16}, 5, 7, 2.5, rng);
  const auto f = from_detector(model);
  EXPECT_EQ(f.dim, 5u);
  ASSERT_TRUE(f.weights);
  EXPECT_EQ(f.weights->size(), 1u + 6u + 6u);
  EXPECT_EQ((*f.weights)[0].data, (std::vector<float>{2.5f}));
  const auto back = to_detector(decode(encode(f)));
  EXPECT_EQ(back.beta, 2.5);
  EXPECT_EQ(back.classifier.widths(), model.classifier.widths());
  EXPECT_EQ(back.phi.widths(), model.phi.widths());
  EXPECT_EQ(to_detector(from_detector(back)), back);

  auto broken = f;
  broken.weights->pop_back();
  broken.weights->pop_back();
  EXPECT_ANY_THROW(to_detector(broken));
}

}  // namespace
}  // namespace oodsynth::doeb
