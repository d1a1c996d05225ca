#include "actstore/shard.hpp"

#include <cmath>
#include <cstring>
#include <numeric>

#include <json.hpp>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace xcod::actstore {

namespace {

constexpr Index kReadChunkRows = 4096;

void remove_quietly(const fs::path& p) {
  std::error_code ec;
  fs::remove(p, ec);
}

void write_header(std::ostream& out, const ShardHeader& h) {
  out.write(kShardMagic, sizeof(kShardMagic));
  binio::put<std::uint32_t>(out, h.version);
  binio::put<std::uint32_t>(out, h.n_sides);
  for (const auto d : h.dims) binio::put<std::uint32_t>(out, d);
  binio::put<std::uint64_t>(out, h.n_rows);
  binio::put<std::uint8_t>(out, h.dtype);
}

std::string meta_line(const TokenMeta& m) {
  nlohmann::json j = {{"doc_id", m.doc_id},
                      {"position", m.position},
                      {"token_id", m.token_id},
                      {"token_text", m.token_text}};
  return j.dump();
}

}  // namespace

std::size_t ShardHeader::row_floats() const {
  return std::accumulate(dims.begin(), dims.end(), std::size_t{0});
}

fs::path meta_path(const fs::path& shard_path) {
  return fs::path(shard_path.string() + ".meta.jsonl");
}

ShardWriter::ShardWriter(fs::path path, std::vector<std::uint32_t> dims) : path_(std::move(path)) {
  require(dims.size() == 1 || dims.size() == 2, ErrorCode::kInvalidArgument,
          "shard must have 1 or 2 sides");
  for (const auto d : dims) require(d >= 1, ErrorCode::kInvalidArgument, "shard dims must be >= 1");
  header_.n_sides = static_cast<std::uint32_t>(dims.size());
  header_.dims = std::move(dims);
  if (path_.has_parent_path()) fs::create_directories(path_.parent_path());
  data_.open(path_, std::ios::binary | std::ios::trunc);
  meta_.open(meta_path(path_), std::ios::trunc);
  if (!data_ || !meta_) {
    data_.close();
    meta_.close();
    remove_quietly(path_);
    remove_quietly(meta_path(path_));
    fail(ErrorCode::kIo, "cannot create shard " + path_.string());
  }
  write_header(data_, header_);
  open_ = true;
}

ShardWriter::~ShardWriter() {
  if (open_) abort();
}

void ShardWriter::append(std::span<const std::span<const float>> sides, const TokenMeta& meta) {
  require(open_, ErrorCode::kInvalidArgument, "shard writer is closed");
  const auto row = header_.n_rows;
  if (sides.size() != header_.n_sides) {
    abort();
    fail(ErrorCode::kShapeMismatch, "row " + std::to_string(row) + " has " + std::to_string(sides.size()) +
                                        " sides, header declares " + std::to_string(header_.n_sides));
  }
  for (std::size_t i = 0; i < sides.size(); ++i) {
    if (sides[i].size() != header_.dims[i]) {
      abort();
      fail(ErrorCode::kShapeMismatch, "row " + std::to_string(row) + " side " + std::to_string(i) +
                                          " has width " + std::to_string(sides[i].size()) + ", expected " +
                                          std::to_string(header_.dims[i]));
    }
  }
  for (const auto& side : sides)
    data_.write(reinterpret_cast<const char*>(side.data()),
                static_cast<std::streamsize>(side.size() * sizeof(float)));
  meta_ << meta_line(meta) << '\n';
  if (!data_ || !meta_) {
    abort();
    fail(ErrorCode::kIo, "write failed for shard " + path_.string());
  }
  ++header_.n_rows;
}

void ShardWriter::append(const ShardRow& row) {
  std::vector<std::span<const float>> views(row.sides.begin(), row.sides.end());
  append(views, row.meta);
}

WriteSummary ShardWriter::finish() {
  require(open_, ErrorCode::kInvalidArgument, "shard writer is closed");
  data_.seekp(static_cast<std::streamoff>(header_.header_bytes() - 9));
  binio::put<std::uint64_t>(data_, header_.n_rows);
  data_.seekp(0, std::ios::end);
  const auto bytes = static_cast<std::uint64_t>(data_.tellp());
  data_.close();
  meta_.close();
  if (data_.fail() || meta_.fail()) {
    open_ = false;
    remove_quietly(path_);
    remove_quietly(meta_path(path_));
    fail(ErrorCode::kIo, "failed to finalize shard " + path_.string());
  }
  open_ = false;
  return {header_.n_rows, bytes};
}

void ShardWriter::abort() {
  data_.close();
  meta_.close();
  remove_quietly(path_);
  remove_quietly(meta_path(path_));
  open_ = false;
}

WriteSummary write_shard(const fs::path& path, const std::vector<std::uint32_t>& dims, const RowSource& next_row) {
  ShardWriter writer(path, dims);
  ShardRow row;
  while (next_row(row)) writer.append(row);
  return writer.finish();
}

WriteSummary write_shard(const fs::path& path, const std::vector<std::uint32_t>& dims,
                         std::span<const ShardRow> rows) {
  std::size_t i = 0;
  return write_shard(path, dims, [&](ShardRow& out) {
    if (i == rows.size()) return false;
    out = rows[i++];
    return true;
  });
}

ShardReader ShardReader::open(const fs::path& path) {
  ShardReader r;
  r.path_ = path;
  r.in_.open(path, std::ios::binary);
  require(r.in_.good(), ErrorCode::kIo, "cannot open shard " + path.string());

  char magic[8] = {};
  r.in_.read(magic, sizeof(magic));
  require(r.in_.gcount() == sizeof(magic) && std::memcmp(magic, kShardMagic, sizeof(magic)) == 0,
          ErrorCode::kBadMagic, "bad magic in shard " + path.string());

  ShardHeader& h = r.header_;
  const bool got = binio::get(r.in_, h.version);
  require(got, ErrorCode::kTruncatedPayload, "truncated header in shard " + path.string());
  require(h.version == kShardVersion, ErrorCode::kUnsupportedVersion,
          "unsupported shard version " + std::to_string(h.version) + " in " + path.string());
  require(binio::get(r.in_, h.n_sides), ErrorCode::kTruncatedPayload,
          "truncated header in shard " + path.string());
  require(h.n_sides == 1 || h.n_sides == 2, ErrorCode::kInvalidArgument,
          "shard declares " + std::to_string(h.n_sides) + " sides");
  h.dims.resize(h.n_sides);
  for (auto& d : h.dims)
    require(binio::get(r.in_, d), ErrorCode::kTruncatedPayload, "truncated header in shard " + path.string());
  require(binio::get(r.in_, h.n_rows) && binio::get(r.in_, h.dtype), ErrorCode::kTruncatedPayload,
          "truncated header in shard " + path.string());
  require(h.dtype == kDtypeF32, ErrorCode::kUnsupportedVersion,
          "unsupported dtype " + std::to_string(h.dtype) + " in " + path.string());

  const auto file_bytes = fs::file_size(path);
  const std::uint64_t remaining = file_bytes - h.header_bytes();
  const std::uint64_t expected = h.n_rows * h.row_bytes();
  require(remaining == expected, ErrorCode::kTruncatedPayload,
          "truncated payload in " + path.string() + ": expected " + std::to_string(expected) +
              " bytes, found " + std::to_string(remaining));
  return r;
}

void ShardReader::seek_row(std::uint64_t row) {
  require(row <= header_.n_rows, ErrorCode::kInvalidArgument, "seek past end of shard");
  in_.clear();
  in_.seekg(static_cast<std::streamoff>(header_.header_bytes() + row * header_.row_bytes()));
  cursor_ = row;
}

MatrixF ShardReader::read_block(Index max_rows) {
  const auto n = static_cast<Index>(std::min<std::uint64_t>(rows_remaining(), static_cast<std::uint64_t>(max_rows)));
  MatrixF block(n, static_cast<Index>(header_.row_floats()));
  if (n == 0) return block;
  in_.read(reinterpret_cast<char*>(block.data()), static_cast<std::streamsize>(block.size() * sizeof(float)));
  require(in_.gcount() == static_cast<std::streamsize>(block.size() * sizeof(float)), ErrorCode::kIo,
          "short read from " + path_.string());
  cursor_ += static_cast<std::uint64_t>(n);
  return block;
}

coder::Batch ShardReader::read_batch(Index max_rows) { return split_block(read_block(max_rows), header_); }

coder::Batch split_block(const MatrixF& block, const ShardHeader& header) {
  coder::Batch batch;
  Index col = 0;
  for (const auto d : header.dims) {
    batch.sides.push_back(block.middleCols(col, d).cast<double>());
    col += d;
  }
  return batch;
}

std::vector<TokenMeta> read_meta(const fs::path& shard_path) {
  std::ifstream in(meta_path(shard_path));
  require(in.good(), ErrorCode::kIo, "cannot open metadata sidecar for " + shard_path.string());
  std::vector<TokenMeta> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      out.push_back({j.at("doc_id").get<std::int64_t>(), j.at("position").get<std::int64_t>(),
                     j.at("token_id").get<std::int64_t>(), j.at("token_text").get<std::string>()});
    } catch (const nlohmann::json::exception& e) {
      fail(ErrorCode::kIo, "malformed metadata record " + std::to_string(out.size()) + " in " +
                               meta_path(shard_path).string() + ": " + e.what());
    }
  }
  return out;
}

void for_each_chunk(const std::vector<fs::path>& paths, Index chunk_rows, const ChunkVisitor& visit) {
  require(chunk_rows >= 1, ErrorCode::kInvalidArgument, "chunk_rows must be >= 1");
  std::uint64_t offset = 0;
  std::optional<ShardHeader> first;
  for (const auto& path : paths) {
    auto reader = ShardReader::open(path);
    if (!first) first = reader.header();
    require(first->same_layout(reader.header()), ErrorCode::kShapeMismatch,
            "shard " + path.string() + " layout differs from " + paths.front().string());
    const auto meta = read_meta(path);
    require(meta.size() == reader.header().n_rows, ErrorCode::kShapeMismatch,
            "metadata/row misalignment in " + path.string() + ": " + std::to_string(meta.size()) +
                " records for " + std::to_string(reader.header().n_rows) + " rows");
    std::uint64_t local = 0;
    while (reader.rows_remaining() > 0) {
      const auto chunk = reader.read_batch(chunk_rows);
      const auto n = static_cast<std::size_t>(chunk.rows());
      visit(chunk, std::span<const TokenMeta>(meta).subspan(local, n), offset);
      local += n;
      offset += n;
    }
  }
}

BatchStream::BatchStream(std::vector<fs::path> paths, Index batch_size, Index shuffle_buffer,
                         std::uint64_t seed, std::uint64_t epochs)
    : paths_(std::move(paths)), batch_size_(batch_size), shuffle_buffer_(shuffle_buffer), epochs_(epochs),
      rng_(seed) {
  require(!paths_.empty(), ErrorCode::kInvalidArgument, "no shards to stream");
  require(batch_size_ >= 1, ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  require(shuffle_buffer_ >= 1, ErrorCode::kInvalidArgument, "shuffle_buffer must be >= 1");
  for (std::size_t i = 0; i < paths_.size(); ++i) {
    const auto h = ShardReader::open(paths_[i]).header();
    if (i == 0) header_ = h;
    require(header_.same_layout(h), ErrorCode::kShapeMismatch,
            "shard " + paths_[i].string() + " layout differs from " + paths_.front().string());
  }
  header_.n_rows = 0;
}

bool BatchStream::open_next_reader() {
  while (next_path_ < paths_.size()) {
    reader_.emplace(ShardReader::open(paths_[next_path_++]));
    if (reader_->rows_remaining() > 0) return true;
  }
  reader_.reset();
  return false;
}

bool BatchStream::pull_row(std::vector<float>& row) {
  if (block_pos_ >= block_.rows()) {
    if (!reader_ || reader_->rows_remaining() == 0) {
      if (!open_next_reader()) return false;
    }
    block_ = reader_->read_block(kReadChunkRows);
    block_pos_ = 0;
  }
  row.assign(block_.row(block_pos_).data(), block_.row(block_pos_).data() + block_.cols());
  ++block_pos_;
  return true;
}

std::optional<coder::Batch> BatchStream::next() {
  if (done_) return std::nullopt;
  std::vector<std::vector<float>> rows;
  rows.reserve(static_cast<std::size_t>(batch_size_));
  std::vector<float> incoming;
  while (static_cast<Index>(rows.size()) < batch_size_) {
    if (buffer_.empty()) {
      while (static_cast<Index>(buffer_.size()) < shuffle_buffer_ && pull_row(incoming))
        buffer_.push_back(incoming);
      if (buffer_.empty()) {
        ++epoch_;
        if (epochs_ != 0 && epoch_ >= epochs_) {
          done_ = true;
          break;
        }
        next_path_ = 0;
        reader_.reset();
        block_.resize(0, 0);
        block_pos_ = 0;
        continue;
      }
    }
    std::uniform_int_distribution<std::size_t> pick(0, buffer_.size() - 1);
    const std::size_t j = pick(rng_);
    rows.push_back(std::move(buffer_[j]));
    if (pull_row(incoming)) {
      buffer_[j] = incoming;
    } else {
      buffer_[j] = std::move(buffer_.back());
      buffer_.pop_back();
    }
  }
  if (rows.empty()) return std::nullopt;

  MatrixF block(static_cast<Index>(rows.size()), static_cast<Index>(header_.row_floats()));
  for (std::size_t r = 0; r < rows.size(); ++r)
    std::memcpy(block.row(static_cast<Index>(r)).data(), rows[r].data(), rows[r].size() * sizeof(float));
  return split_block(block, header_);
}

std::vector<SideStats> shard_stats(const std::vector<fs::path>& paths) {
  require(!paths.empty(), ErrorCode::kInvalidArgument, "no shards given");
  std::vector<SideStats> stats;
  std::vector<double> norm_sums;
  std::optional<ShardHeader> first;
  for (const auto& path : paths) {
    auto reader = ShardReader::open(path);
    if (!first) {
      first = reader.header();
      for (const auto d : first->dims) {
        stats.push_back({0, 0.0, Vector::Zero(d)});
        norm_sums.push_back(0.0);
      }
    }
    require(first->same_layout(reader.header()), ErrorCode::kShapeMismatch,
            "shard " + path.string() + " layout differs from " + paths.front().string());
    while (reader.rows_remaining() > 0) {
      const auto batch = reader.read_batch(kReadChunkRows);
      for (std::size_t i = 0; i < batch.sides.size(); ++i) {
        stats[i].rows += static_cast<std::uint64_t>(batch.sides[i].rows());
        stats[i].mean += batch.sides[i].colwise().sum().transpose();
        norm_sums[i] += batch.sides[i].rowwise().norm().sum();
      }
    }
  }
  for (std::size_t i = 0; i < stats.size(); ++i) {
    if (stats[i].rows == 0) continue;
    const double n = static_cast<double>(stats[i].rows);
    stats[i].mean /= n;
    stats[i].mean_norm = norm_sums[i] / n;
  }
  return stats;
}

}  // namespace xcod::actstore
