#include <doctest.h>

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>

#include "actstore/shard.hpp"
#include "common/error.hpp"

using namespace xcod;
using namespace xcod::actstore;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "xcod_test_actstore";
  fs::create_directories(dir);
  return dir / name;
}

std::vector<ShardRow> random_rows(std::size_t n, std::vector<std::uint32_t> dims, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  std::vector<ShardRow> rows(n);
  for (std::size_t r = 0; r < n; ++r) {
    for (const auto d : dims) {
      std::vector<float> v(d);
      for (auto& x : v) x = normal(rng);
      rows[r].sides.push_back(v);
    }
    rows[r].meta = {static_cast<std::int64_t>(r / 5), static_cast<std::int64_t>(r % 5), static_cast<std::int64_t>(r * 7),
                    "t\"ok " + std::to_string(r)};
  }
  return rows;
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return ErrorCode::kInternal;
}

}  // namespace

TEST_CASE("write then read returns identical floats and metadata") {
  const auto path = scratch("roundtrip.xcs");
  const auto rows = random_rows(37, {3, 5}, 1);
  const auto summary = write_shard(path, {3, 5}, rows);
  CHECK(summary.rows_written == 37);
  CHECK(summary.byte_count == fs::file_size(path));

  auto reader = ShardReader::open(path);
  CHECK(reader.header().n_rows == 37);
  CHECK(reader.header().dims == std::vector<std::uint32_t>{3, 5});
  const MatrixF block = reader.read_block(100);
  REQUIRE(block.rows() == 37);
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (int j = 0; j < 3; ++j) CHECK(block(static_cast<Index>(r), j) == rows[r].sides[0][j]);
    for (int j = 0; j < 5; ++j) CHECK(block(static_cast<Index>(r), 3 + j) == rows[r].sides[1][j]);
  }
  const auto meta = read_meta(path);
  REQUIRE(meta.size() == rows.size());
  for (std::size_t r = 0; r < rows.size(); ++r) CHECK(meta[r] == rows[r].meta);
}

TEST_CASE("seek and batched reads") {
  const auto path = scratch("seek.xcs");
  const auto rows = random_rows(10, {2}, 2);
  write_shard(path, {2}, rows);
  auto reader = ShardReader::open(path);
  reader.seek_row(7);
  const auto b = reader.read_batch(5);
  CHECK(b.rows() == 3);
  CHECK(b.sides[0](0, 1) == static_cast<double>(rows[7].sides[0][1]));
  CHECK(reader.rows_remaining() == 0);
  CHECK(reader.read_block(4).rows() == 0);
  CHECK_THROWS_AS(reader.seek_row(11), Error);
}

TEST_CASE("empty shard has a valid header") {
  const auto path = scratch("empty.xcs");
  write_shard(path, {4, 4}, std::span<const ShardRow>{});
  auto reader = ShardReader::open(path);
  CHECK(reader.header().n_rows == 0);
  CHECK(read_meta(path).empty());
}

TEST_CASE("corrupted magic and truncated payload raise distinct errors") {
  const auto good = scratch("good.xcs");
  write_shard(good, {3, 3}, random_rows(8, {3, 3}, 3));

  const auto bad_magic = scratch("bad_magic.xcs");
  fs::copy_file(good, bad_magic, fs::copy_options::overwrite_existing);
  {
    std::fstream f(bad_magic, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(0);
    f.put('Z');
  }
  CHECK(code_of([&] { ShardReader::open(bad_magic); }) == ErrorCode::kBadMagic);

  const auto truncated = scratch("truncated.xcs");
  fs::copy_file(good, truncated, fs::copy_options::overwrite_existing);
  fs::resize_file(truncated, fs::file_size(good) - 5);
  CHECK(code_of([&] { ShardReader::open(truncated); }) == ErrorCode::kTruncatedPayload);

  const auto version = scratch("version.xcs");
  fs::copy_file(good, version, fs::copy_options::overwrite_existing);
  {
    std::fstream f(version, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(8);
    f.put(9);
  }
  CHECK(code_of([&] { ShardReader::open(version); }) == ErrorCode::kUnsupportedVersion);
  CHECK(code_of([&] { ShardReader::open(scratch("missing.xcs")); }) == ErrorCode::kIo);
}

TEST_CASE("a mismatched row aborts the write and names the row") {
  const auto path = scratch("mismatch.xcs");
  auto rows = random_rows(4, {3, 3}, 4);
  rows[2].sides[1].pop_back();
  try {
    write_shard(path, {3, 3}, rows);
    FAIL("expected an error");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
    CHECK(std::string(e.what()).find("row 2") != std::string::npos);
  }
  CHECK_FALSE(fs::exists(path));
  CHECK_FALSE(fs::exists(meta_path(path)));
}

TEST_CASE("a batch stream visits every row once per epoch") {
  const auto a = scratch("stream_a.xcs");
  const auto b = scratch("stream_b.xcs");
  auto rows = random_rows(50, {1}, 5);
  for (std::size_t r = 0; r < rows.size(); ++r) rows[r].sides[0][0] = static_cast<float>(r);
  write_shard(a, {1}, std::span<const ShardRow>(rows.data(), 23));
  write_shard(b, {1}, std::span<const ShardRow>(rows.data() + 23, 27));

  BatchStream stream({a, b}, 8, 16, 9, 2);
  std::map<int, int> seen;
  std::vector<double> order;
  while (auto batch = stream.next())
    for (Index r = 0; r < batch->rows(); ++r) {
      ++seen[static_cast<int>(batch->sides[0](r, 0))];
      order.push_back(batch->sides[0](r, 0));
    }
  CHECK(seen.size() == 50);
  for (const auto& [row, count] : seen) CHECK(count == 2);
  // first epoch alone covers all rows
  std::vector<double> first(order.begin(), order.begin() + 50);
  std::sort(first.begin(), first.end());
  for (int i = 0; i < 50; ++i) CHECK(first[static_cast<std::size_t>(i)] == i);
  CHECK_FALSE(std::is_sorted(order.begin(), order.begin() + 50));

  BatchStream again({a, b}, 8, 16, 9, 2);
  std::vector<double> replay;
  while (auto batch = again.next())
    for (Index r = 0; r < batch->rows(); ++r) replay.push_back(batch->sides[0](r, 0));
  CHECK(replay == order);
}

TEST_CASE("streams reject shards of different layouts") {
  const auto a = scratch("layout_a.xcs");
  const auto b = scratch("layout_b.xcs");
  write_shard(a, {2}, random_rows(3, {2}, 6));
  write_shard(b, {3}, random_rows(3, {3}, 6));
  CHECK_THROWS_AS(BatchStream({a, b}, 2, 4, 0, 1), Error);
}

TEST_CASE("chunks arrive in file order with aligned metadata") {
  const auto path = scratch("chunks.xcs");
  const auto rows = random_rows(11, {2}, 7);
  write_shard(path, {2}, rows);
  std::uint64_t expected_first = 0;
  for_each_chunk({path}, 4, [&](const coder::Batch& chunk, std::span<const TokenMeta> meta, std::uint64_t first) {
    CHECK(first == expected_first);
    CHECK(static_cast<std::size_t>(chunk.rows()) == meta.size());
    for (std::size_t i = 0; i < meta.size(); ++i) CHECK(meta[i] == rows[first + i].meta);
    expected_first += meta.size();
  });
  CHECK(expected_first == 11);
}

TEST_CASE("side statistics") {
  const auto path = scratch("stats.xcs");
  std::vector<ShardRow> rows(2);
  rows[0].sides = {{3.0f, 4.0f}, {1.0f}};
  rows[1].sides = {{0.0f, 0.0f}, {-3.0f}};
  write_shard(path, {2, 1}, rows);
  const auto stats = shard_stats({path});
  CHECK(stats[0].rows == 2);
  CHECK(stats[0].mean_norm == doctest::Approx(2.5));
  CHECK(stats[1].mean_norm == doctest::Approx(2.0));
  CHECK(stats[1].mean(0) == doctest::Approx(-1.0));
}
