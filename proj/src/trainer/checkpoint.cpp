#include "trainer/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "common/binio.hpp"
#include "common/error.hpp"

namespace xcod::trainer {

namespace {

void write_params(std::ostream& out, const coder::CrosscoderParams& p) {
  p.for_each_block([&](const double* data, std::size_t n) { binio::put_array(out, data, n); });
}

void read_params(std::istream& in, coder::CrosscoderParams& p, const std::string& path) {
  p.for_each_block([&](double* data, std::size_t n) {
    require(binio::get_array(in, data, n), ErrorCode::kTruncatedPayload, "truncated checkpoint " + path);
  });
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const TrainState& state, const nlohmann::json& config) {
  state.params.validate();
  const auto& shape = state.params.shape;
  nlohmann::json header = {
      {"shape", {{"n_sides", shape.n_sides}, {"dims", shape.dims}, {"n_features", shape.n_features}}},
      {"config_digest", state.config_digest},
      {"step", state.step},
      {"batches_consumed", state.batches_consumed},
      {"normalization", state.normalization},
      {"rng_state", state.rng_state},
      {"config", config},
  };
  const std::string text = header.dump();

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorCode::kIo, "cannot write checkpoint " + path.string());
  out.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  binio::put<std::uint32_t>(out, kCheckpointVersion);
  binio::put<std::uint64_t>(out, text.size());
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  write_params(out, state.params);
  write_params(out, state.adam_m);
  write_params(out, state.adam_v);
  binio::put_array(out, state.tokens_since_fired.data(), state.tokens_since_fired.size());
  require(out.good(), ErrorCode::kIo, "write failed for checkpoint " + path.string());
}

LoadedCheckpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorCode::kIo, "cannot open checkpoint " + path.string());
  char magic[8] = {};
  in.read(magic, sizeof(magic));
  require(in.gcount() == sizeof(magic) && std::memcmp(magic, kCheckpointMagic, sizeof(magic)) == 0,
          ErrorCode::kBadMagic, "bad magic in checkpoint " + path.string());
  std::uint32_t version = 0;
  require(binio::get(in, version), ErrorCode::kTruncatedPayload, "truncated checkpoint " + path.string());
  require(version == kCheckpointVersion, ErrorCode::kUnsupportedVersion,
          "unsupported checkpoint version " + std::to_string(version));
  std::uint64_t header_len = 0;
  require(binio::get(in, header_len), ErrorCode::kTruncatedPayload, "truncated checkpoint " + path.string());
  require(header_len < (1ULL << 32), ErrorCode::kTruncatedPayload, "implausible checkpoint header length");
  std::string text(header_len, '\0');
  in.read(text.data(), static_cast<std::streamsize>(header_len));
  require(static_cast<std::uint64_t>(in.gcount()) == header_len, ErrorCode::kTruncatedPayload,
          "truncated checkpoint header in " + path.string());

  LoadedCheckpoint out;
  try {
    out.header = nlohmann::json::parse(text);
    const auto& s = out.header.at("shape");
    coder::CoderShape shape{s.at("n_sides").get<int>(), s.at("dims").get<std::vector<coder::Index>>(),
                            s.at("n_features").get<coder::Index>()};
    shape.validate();
    TrainState& st = out.state;
    st.params = coder::CrosscoderParams::zeros(shape);
    st.adam_m = coder::CrosscoderParams::zeros(shape);
    st.adam_v = coder::CrosscoderParams::zeros(shape);
    st.config_digest = out.header.at("config_digest").get<std::string>();
    st.step = out.header.at("step").get<std::uint64_t>();
    st.batches_consumed = out.header.at("batches_consumed").get<std::uint64_t>();
    st.normalization = out.header.at("normalization").get<std::vector<double>>();
    st.rng_state = out.header.at("rng_state").get<std::string>();
    st.tokens_since_fired.assign(static_cast<std::size_t>(shape.n_features), 0.0);
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::kIo, "malformed checkpoint header in " + path.string() + ": " + e.what());
  }
  const std::string p = path.string();
  read_params(in, out.state.params, p);
  read_params(in, out.state.adam_m, p);
  read_params(in, out.state.adam_v, p);
  require(binio::get_array(in, out.state.tokens_since_fired.data(), out.state.tokens_since_fired.size()),
          ErrorCode::kTruncatedPayload, "truncated checkpoint " + p);
  in.peek();
  require(in.eof(), ErrorCode::kTruncatedPayload, "trailing bytes in checkpoint " + p);
  out.state.params.validate();
  return out;
}

}  // namespace xcod::trainer
