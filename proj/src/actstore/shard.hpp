#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coder/coder.hpp"
#include "common/types.hpp"

namespace xcod::actstore {

namespace fs = std::filesystem;
using Index = Eigen::Index;

inline constexpr char kShardMagic[8] = {'X', 'C', 'O', 'D', 'S', 'H', 'R', 'D'};
inline constexpr std::uint32_t kShardVersion = 1;
inline constexpr std::uint8_t kDtypeF32 = 0;

// On disk (little-endian): magic[8] | version u32 | n_sides u32 |
// dims u32 x n_sides | n_rows u64 | dtype u8 | payload.
// Payload is row-major f32: side 0 vector then side 1 vector per token.
struct ShardHeader {
  std::uint32_t version = kShardVersion;
  std::uint32_t n_sides = 2;
  std::vector<std::uint32_t> dims;
  std::uint64_t n_rows = 0;
  std::uint8_t dtype = kDtypeF32;

  std::size_t header_bytes() const { return 8 + 4 + 4 + 4 * dims.size() + 8 + 1; }
  std::size_t row_floats() const;
  std::size_t row_bytes() const { return row_floats() * sizeof(float); }
  bool same_layout(const ShardHeader& other) const {
    return n_sides == other.n_sides && dims == other.dims && dtype == other.dtype;
  }
};

struct TokenMeta {
  std::int64_t doc_id = 0;
  std::int64_t position = 0;
  std::int64_t token_id = 0;
  std::string token_text;

  bool operator==(const TokenMeta&) const = default;
};

fs::path meta_path(const fs::path& shard_path);

struct ShardRow {
  std::vector<std::vector<float>> sides;
  TokenMeta meta;
};

struct WriteSummary {
  std::uint64_t rows_written = 0;
  std::uint64_t byte_count = 0;  // shard file size, header included
};

// Streaming writer. Anything other than a successful finish() removes the
// shard and its sidecar.
class ShardWriter {
 public:
  ShardWriter(fs::path path, std::vector<std::uint32_t> dims);
  ~ShardWriter();
  ShardWriter(const ShardWriter&) = delete;
  ShardWriter& operator=(const ShardWriter&) = delete;

  void append(std::span<const std::span<const float>> sides, const TokenMeta& meta);
  void append(const ShardRow& row);
  WriteSummary finish();
  void abort();

 private:
  fs::path path_;
  ShardHeader header_;
  std::ofstream data_;
  std::ofstream meta_;
  bool open_ = false;
};

using RowSource = std::function<bool(ShardRow&)>;

WriteSummary write_shard(const fs::path& path, const std::vector<std::uint32_t>& dims,
                         const RowSource& next_row);
WriteSummary write_shard(const fs::path& path, const std::vector<std::uint32_t>& dims,
                         std::span<const ShardRow> rows);

class ShardReader {
 public:
  // Validates magic, version, layout and payload length before returning.
  static ShardReader open(const fs::path& path);

  const ShardHeader& header() const { return header_; }
  const fs::path& path() const { return path_; }
  std::uint64_t rows_remaining() const { return header_.n_rows - cursor_; }

  void seek_row(std::uint64_t row);
  // Reads up to max_rows rows as one row-major block (rows x row_floats).
  MatrixF read_block(Index max_rows);
  // Same, split per side and widened to double.
  coder::Batch read_batch(Index max_rows);

 private:
  ShardReader() = default;
  fs::path path_;
  ShardHeader header_;
  std::ifstream in_;
  std::uint64_t cursor_ = 0;
};

std::vector<TokenMeta> read_meta(const fs::path& shard_path);

coder::Batch split_block(const MatrixF& block, const ShardHeader& header);

// Visits every row of the shards in file order, chunk_rows at a time,
// together with the aligned token metadata.
using ChunkVisitor =
    std::function<void(const coder::Batch& chunk, std::span<const TokenMeta> meta, std::uint64_t first_row)>;
void for_each_chunk(const std::vector<fs::path>& paths, Index chunk_rows, const ChunkVisitor& visit);

class BatchStream {
 public:
  // epochs == 0 streams forever.
  BatchStream(std::vector<fs::path> paths, Index batch_size, Index shuffle_buffer,
              std::uint64_t seed, std::uint64_t epochs = 1);

  const ShardHeader& header() const { return header_; }
  std::optional<coder::Batch> next();
  std::uint64_t epoch() const { return epoch_; }

 private:
  bool pull_row(std::vector<float>& row);
  bool open_next_reader();

  std::vector<fs::path> paths_;
  Index batch_size_;
  Index shuffle_buffer_;
  std::uint64_t epochs_;
  ShardHeader header_;
  std::mt19937_64 rng_;

  std::vector<std::vector<float>> buffer_;
  std::optional<ShardReader> reader_;
  std::size_t next_path_ = 0;
  std::uint64_t epoch_ = 0;
  MatrixF block_;
  Index block_pos_ = 0;
  bool done_ = false;
};

struct SideStats {
  std::uint64_t rows = 0;
  double mean_norm = 0.0;
  Vector mean;
};

std::vector<SideStats> shard_stats(const std::vector<fs::path>& paths);

}  // namespace xcod::actstore
