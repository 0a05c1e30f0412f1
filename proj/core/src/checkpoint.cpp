#include "cdpo/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "json.hpp"

namespace cdpo {

using nlohmann::json;

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

constexpr const char* kFormat = "cdpo-ckpt";
constexpr int kVersion = 1;

std::uint32_t crc_of(const char* data, std::size_t n) {
  uLong crc = crc32(0L, Z_NULL, 0);
  std::size_t done = 0;
  while (done < n) {
    const auto chunk = static_cast<uInt>(std::min<std::size_t>(n - done, 1u << 30));
    crc = crc32(crc, reinterpret_cast<const Bytef*>(data + done), chunk);
    done += chunk;
  }
  return static_cast<std::uint32_t>(crc);
}

CheckpointError malformed(const std::string& path, const std::string& why) {
  return CheckpointError(CheckpointError::Reason::malformed_header, "checkpoint '" + path + "': " + why);
}

}  // namespace

void save_checkpoint(const ParamVector& params, const std::string& path, const std::string& kind,
                     const std::string& arch) {
  const auto& v = params.values();
  const char* blob = reinterpret_cast<const char*>(v.data());
  const std::size_t bytes = v.size() * sizeof(double);
  json layout = json::array();
  for (const auto& s : params.layout()) layout.push_back({{"name", s.name}, {"offset", s.offset}, {"shape", s.shape}});
  json header = {{"format", kFormat},  {"version", kVersion},       {"kind", kind},
                 {"arch", json::parse(arch)}, {"layout", layout}, {"count", v.size()},
                 {"crc32", crc_of(blob, bytes)}};
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw CheckpointError(CheckpointError::Reason::io, "cannot write checkpoint '" + path + "'");
  const std::string line = header.dump() + "\n";
  out.write(line.data(), static_cast<std::streamsize>(line.size()));
  out.write(blob, static_cast<std::streamsize>(bytes));
  if (!out) throw CheckpointError(CheckpointError::Reason::io, "failed writing checkpoint '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Reason::io, "cannot read checkpoint '" + path + "'");
  std::string line;
  if (!std::getline(in, line)) throw malformed(path, "missing header line");
  json header;
  try {
    header = json::parse(line);
  } catch (const json::parse_error&) {
    throw malformed(path, "header is not JSON");
  }
  Checkpoint ck;
  std::size_t count = 0;
  std::uint32_t crc = 0;
  std::vector<Segment> layout;
  try {
    if (header.at("format") != kFormat || header.at("version") != kVersion) {
      throw malformed(path, "unknown format or version");
    }
    ck.kind = header.at("kind").get<std::string>();
    ck.arch = header.at("arch").dump();
    count = header.at("count").get<std::size_t>();
    crc = header.at("crc32").get<std::uint32_t>();
    for (const auto& s : header.at("layout")) {
      layout.push_back({s.at("name").get<std::string>(), s.at("offset").get<std::size_t>(),
                        s.at("shape").get<std::vector<std::size_t>>()});
    }
  } catch (const json::exception& e) {
    throw malformed(path, std::string("bad header field: ") + e.what());
  }

  const std::string blob((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const std::size_t expected = count * sizeof(double);
  if (blob.size() > expected) {
    throw CheckpointError(CheckpointError::Reason::length_mismatch,
                          "checkpoint '" + path + "': " + std::to_string(blob.size()) + " payload bytes, header says " +
                              std::to_string(expected));
  }
  // A short payload cannot match the recorded checksum.
  if (blob.size() < expected || crc_of(blob.data(), blob.size()) != crc) {
    throw CheckpointError(CheckpointError::Reason::checksum_mismatch, "checkpoint '" + path + "': checksum failure");
  }
  Vec values(count);
  std::memcpy(values.data(), blob.data(), expected);
  try {
    ck.params = ParamVector(std::move(layout), std::move(values));
  } catch (const std::invalid_argument& e) {
    throw CheckpointError(CheckpointError::Reason::length_mismatch, "checkpoint '" + path + "': " + e.what());
  }
  return ck;
}

namespace {

json spec_json(const MlpSpec& s) {
  return {{"dim", s.dim},
          {"out_dim", s.out_dim},
          {"hidden", s.hidden},
          {"time_embed", s.time_embed},
          {"cond_embed", s.cond_embed},
          {"n_conditions", s.n_conditions},
          {"time_horizon", s.time_horizon},
          {"activation", s.activation == Activation::silu ? "silu" : "tanh"}};
}

}  // namespace

std::string arch_json(const MlpSpec& spec) { return json{{"mlp", spec_json(spec)}}.dump(); }

std::string arch_json(const MlpSpec& spec, const BoundaryScaling& b) {
  return json{{"mlp", spec_json(spec)}, {"boundary", {{"delta", b.delta}, {"sigma_data", b.sigma_data}}}}.dump();
}

MlpSpec mlp_spec_from_arch(const std::string& arch) {
  try {
    const auto j = json::parse(arch).at("mlp");
    MlpSpec s;
    s.dim = j.at("dim");
    s.out_dim = j.at("out_dim");
    s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
    s.time_embed = j.at("time_embed");
    s.cond_embed = j.at("cond_embed");
    s.n_conditions = j.at("n_conditions");
    s.time_horizon = j.at("time_horizon");
    s.activation = j.at("activation") == "tanh" ? Activation::tanh : Activation::silu;
    return s;
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Reason::malformed_header, std::string("bad architecture: ") + e.what());
  }
}

BoundaryScaling boundary_from_arch(const std::string& arch) {
  try {
    const auto j = json::parse(arch).at("boundary");
    BoundaryScaling b;
    b.delta = j.at("delta");
    b.sigma_data = j.at("sigma_data");
    return b;
  } catch (const json::exception& e) {
    throw CheckpointError(CheckpointError::Reason::malformed_header, std::string("bad boundary: ") + e.what());
  }
}

namespace {

void install(Mlp& mlp, const Checkpoint& ck, const std::string& path) {
  if (!(ck.params.layout() == mlp.params().layout())) {
    throw CheckpointError(CheckpointError::Reason::layout_mismatch,
                          "checkpoint '" + path + "': layout does not match the network");
  }
  mlp.params() = ck.params;
}

}  // namespace

void save_denoiser(const DenoiserNet& net, const std::string& path) {
  save_checkpoint(net.params(), path, "denoiser", arch_json(net.mlp().spec()));
}

DenoiserNet load_denoiser(const std::string& path) {
  const auto ck = load_checkpoint(path);
  if (ck.kind != "denoiser") {
    throw CheckpointError(CheckpointError::Reason::layout_mismatch, "checkpoint '" + path + "' is not a denoiser");
  }
  DenoiserNet net(mlp_spec_from_arch(ck.arch));
  install(net.mlp(), ck, path);
  return net;
}

void save_consistency(const ConsistencyNet& net, const std::string& path) {
  save_checkpoint(net.params(), path, "consistency", arch_json(net.raw().spec(), net.boundary()));
}

ConsistencyNet load_consistency(const std::string& path) {
  const auto ck = load_checkpoint(path);
  if (ck.kind != "consistency") {
    throw CheckpointError(CheckpointError::Reason::layout_mismatch,
                          "checkpoint '" + path + "' is not a consistency model");
  }
  ConsistencyNet net(Mlp(mlp_spec_from_arch(ck.arch)), boundary_from_arch(ck.arch));
  install(net.raw(), ck, path);
  return net;
}

}  // namespace cdpo
