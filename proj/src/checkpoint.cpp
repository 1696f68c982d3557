#include "icl/checkpoint.hpp"

#include <fstream>

#include <json.hpp>

#include "icl/csv.hpp"

namespace icl {

namespace {

using nlohmann::json;

json encode(std::span<const double> data, std::size_t rows, std::size_t cols) {
  return {{"shape", {rows, cols}}, {"data", std::vector<double>(data.begin(), data.end())}};
}

json encode(const Matrix& m) { return encode(m.data(), m.rows(), m.cols()); }
json encode(const Vec& v) { return encode(v, v.size(), 1); }

Matrix decode_matrix(const json& j, const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  const auto data = j.at("data").get<Vec>();
  if (shape.size() != 2 || data.size() != shape[0] * shape[1])
    throw FormatError(name + ": data length does not match the shape header");
  Matrix m(shape[0], shape[1]);
  std::copy(data.begin(), data.end(), m.data().begin());
  return m;
}

Vec decode_vec(const json& j, const std::string& name) {
  const Matrix m = decode_matrix(j, name);
  if (m.cols() != 1) throw FormatError(name + ": expected a column vector");
  return m.col(0);
}

}  // namespace

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  validate(ckpt.params);
  json doc;
  doc["format"] = "iclab-checkpoint";
  doc["version"] = kCheckpointVersion;
  doc["seed"] = ckpt.seed;
  doc["step"] = ckpt.step;
  doc["config_hash"] = ckpt.config_hash;
  doc["config"] = ckpt.config_text;
  doc["variant"] = std::string(to_string(ckpt.params.variant));
  doc["readout"] = ckpt.params.readout;
  auto& blocks = doc["blocks"] = json::array();
  for (const auto& b : ckpt.params.blocks) {
    json jb;
    jb["heads"] = b.attention.heads;
    jb["attn.wq"] = encode(b.attention.wq);
    jb["attn.wk"] = encode(b.attention.wk);
    jb["attn.wv"] = encode(b.attention.wv);
    jb["attn.wo"] = encode(b.attention.wo);
    jb["mlp.w"] = encode(b.mlp.w);
    jb["mlp.b"] = encode(b.mlp.b);
    jb["mlp.w_out"] = encode(b.mlp.w_out);
    jb["mlp.b_out"] = encode(b.mlp.b_out);
    if (b.ln_attn) {
      jb["ln_attn"] = {{"gamma", encode(b.ln_attn->gamma)}, {"beta", encode(b.ln_attn->beta)},
                       {"eps", b.ln_attn->eps}};
      jb["ln_mlp"] = {{"gamma", encode(b.ln_mlp->gamma)}, {"beta", encode(b.ln_mlp->beta)},
                      {"eps", b.ln_mlp->eps}};
    }
    blocks.push_back(std::move(jb));
  }
  write_file_atomic(path, doc.dump() + "\n");
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path.string());
  try {
    const json doc = json::parse(in);
    if (doc.at("format") != "iclab-checkpoint")
      throw FormatError(path.string() + ": not an iclab checkpoint");
    if (doc.at("version") != kCheckpointVersion)
      throw FormatError(path.string() + ": unsupported checkpoint version");
    Checkpoint ckpt;
    ckpt.seed = doc.at("seed").get<std::uint64_t>();
    ckpt.step = doc.at("step").get<std::size_t>();
    ckpt.config_hash = doc.at("config_hash").get<std::string>();
    ckpt.config_text = doc.at("config").get<std::string>();
    ckpt.params.variant = parse_variant(doc.at("variant").get<std::string>());
    ckpt.params.readout = doc.at("readout").get<std::size_t>();
    for (const auto& jb : doc.at("blocks")) {
      BlockParams b;
      b.attention.heads = jb.at("heads").get<std::size_t>();
      b.attention.wq = decode_matrix(jb.at("attn.wq"), "attn.wq");
      b.attention.wk = decode_matrix(jb.at("attn.wk"), "attn.wk");
      b.attention.wv = decode_matrix(jb.at("attn.wv"), "attn.wv");
      b.attention.wo = decode_matrix(jb.at("attn.wo"), "attn.wo");
      b.mlp.w = decode_matrix(jb.at("mlp.w"), "mlp.w");
      b.mlp.b = decode_vec(jb.at("mlp.b"), "mlp.b");
      b.mlp.w_out = decode_matrix(jb.at("mlp.w_out"), "mlp.w_out");
      b.mlp.b_out = decode_vec(jb.at("mlp.b_out"), "mlp.b_out");
      for (auto [key, slot] : {std::pair{"ln_attn", &b.ln_attn}, std::pair{"ln_mlp", &b.ln_mlp}}) {
        if (!jb.contains(key)) continue;
        const auto& jl = jb.at(key);
        *slot = LnParams{decode_vec(jl.at("gamma"), std::string(key) + ".gamma"),
                         decode_vec(jl.at("beta"), std::string(key) + ".beta"),
                         jl.at("eps").get<double>()};
      }
      ckpt.params.blocks.push_back(std::move(b));
    }
    validate(ckpt.params);
    return ckpt;
  } catch (const json::exception& e) {
    throw FormatError(path.string() + ": " + e.what());
  } catch (const std::invalid_argument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

}  // namespace icl
