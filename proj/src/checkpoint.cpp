#include "mmfuse/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace mmfuse {

namespace fs = std::filesystem;
using ordered_json = nlohmann::ordered_json;

namespace {

constexpr char kMagic[8] = {'M', 'M', 'F', 'U', 'S', 'E', 'C', '1'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::ostream& os, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  os.write(reinterpret_cast<const char*>(b), 4);
}

std::uint32_t get_u32(std::istream& is, const std::string& what) {
  unsigned char b[4];
  is.read(reinterpret_cast<char*>(b), 4);
  if (!is) throw ParseError("checkpoint: truncated while reading " + what);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

ordered_json config_to_json(const ModelConfig& c) {
  ordered_json j;
  j["d"] = c.d;
  j["d_a"] = c.d_a;
  j["heads"] = c.heads;
  j["s_layers"] = c.s_layers;
  j["t_layers"] = c.t_layers;
  j["conv_kernel"] = c.conv_kernel;
  j["conv_stride"] = c.conv_stride;
  j["vocab_tokens"] = c.vocab_tokens;
  j["charset"] = c.charset;
  j["text_frozen"] = c.text_frozen;
  j["dropout"] = c.dropout;
  j["seed"] = c.seed;
  j["speech_passthrough"] = c.speech_passthrough;
  return j;
}

ModelConfig config_from_json(const ordered_json& j) {
  ModelConfig c;
  c.d = j.at("d").get<int>();
  c.d_a = j.at("d_a").get<int>();
  c.heads = j.at("heads").get<int>();
  c.s_layers = j.at("s_layers").get<int>();
  c.t_layers = j.at("t_layers").get<int>();
  c.conv_kernel = j.at("conv_kernel").get<int>();
  c.conv_stride = j.at("conv_stride").get<int>();
  c.vocab_tokens = j.at("vocab_tokens").get<int>();
  c.charset = j.at("charset").get<std::string>();
  c.text_frozen = j.at("text_frozen").get<bool>();
  c.dropout = j.at("dropout").get<double>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.speech_passthrough = j.at("speech_passthrough").get<bool>();
  return c;
}

}  // namespace

void save_checkpoint(const Model& m, const fs::path& path) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot write checkpoint: " + path.string());
  os.write(kMagic, 8);
  put_u32(os, kVersion);

  const std::string meta = config_to_json(m.config).dump();
  put_u32(os, static_cast<std::uint32_t>(meta.size()));
  os.write(meta.data(), static_cast<std::streamsize>(meta.size()));

  const auto params = m.parameters();
  put_u32(os, static_cast<std::uint32_t>(params.size()));
  for (const Param* p : params) {
    put_u32(os, static_cast<std::uint32_t>(p->name.size()));
    os.write(p->name.data(), static_cast<std::streamsize>(p->name.size()));
    put_u32(os, static_cast<std::uint32_t>(p->v.rows()));
    put_u32(os, static_cast<std::uint32_t>(p->v.cols()));
    for (Eigen::Index i = 0; i < p->v.rows(); ++i)
      for (Eigen::Index j = 0; j < p->v.cols(); ++j) {
        const float f = static_cast<float>(p->v(i, j));
        os.write(reinterpret_cast<const char*>(&f), sizeof(float));
      }
  }
  if (!os) throw IoError("checkpoint write failed: " + path.string());
}

Model load_checkpoint(const fs::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kMagic, 8) != 0)
    throw ParseError("not a checkpoint (bad magic): " + path.string());
  const std::uint32_t version = get_u32(is, "version");
  if (version != kVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version));

  const std::uint32_t meta_len = get_u32(is, "meta length");
  std::string meta(meta_len, '\0');
  is.read(meta.data(), meta_len);
  if (!is) throw ParseError("checkpoint: truncated metadata");
  ModelConfig cfg;
  try {
    cfg = config_from_json(ordered_json::parse(meta));
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint metadata: ") + e.what());
  }

  Model m = make_model(cfg);
  auto params = m.parameters();
  const std::uint32_t n_tensors = get_u32(is, "tensor count");
  if (n_tensors != params.size())
    throw ParseError("checkpoint holds " + std::to_string(n_tensors) + " tensors, model expects " +
                     std::to_string(params.size()));
  for (Param* p : params) {
    const std::uint32_t name_len = get_u32(is, "tensor name length");
    std::string name(name_len, '\0');
    is.read(name.data(), name_len);
    if (!is) throw ParseError("checkpoint: truncated tensor name");
    if (name != p->name)
      throw ParseError("checkpoint tensor order mismatch: got '" + name + "', expected '" + p->name + "'");
    const std::uint32_t rows = get_u32(is, name + " rows");
    const std::uint32_t cols = get_u32(is, name + " cols");
    if (rows != p->v.rows() || cols != p->v.cols())
      throw ParseError("checkpoint tensor " + name + " has shape " + std::to_string(rows) + "x" +
                       std::to_string(cols) + ", expected " + std::to_string(p->v.rows()) + "x" +
                       std::to_string(p->v.cols()));
    for (std::uint32_t i = 0; i < rows; ++i)
      for (std::uint32_t j = 0; j < cols; ++j) {
        float f;
        is.read(reinterpret_cast<char*>(&f), sizeof(float));
        if (!is) throw ParseError("checkpoint: truncated tensor " + name);
        p->v(i, j) = static_cast<double>(f);
      }
  }
  return m;
}

}  // namespace mmfuse
