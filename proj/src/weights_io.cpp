#include "timflow/weights_io.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

#include "binary_io.hpp"
#include "json.hpp"
#include "timflow/surrogate.hpp"

namespace timflow {

namespace detail {

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const std::string& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot write " + path);
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorKind::IoError, "write failed for " + path);
}

}  // namespace detail

namespace {

std::string tensor_name(const LayerShape& l, std::size_t layer, bool bias) {
  const char* kind = l.kind == LayerShape::Kind::Conv ? "conv" : "dense";
  return std::string(kind) + std::to_string(layer) + (bias ? ".bias" : ".weight");
}

}  // namespace

std::string serialize_model(const SurrogateModel& model) {
  nlohmann::json header;
  header["hyperparams"] = to_json(model.hyperparams());
  header["input_scale"] = model.input_scale();
  header["resolution"] = {model.resolution().height, model.resolution().width};
  nlohmann::json tensors = nlohmann::json::array();
  for (std::size_t i = 0; i < model.weights().size(); ++i) {
    const LayerShape& l = model.layers()[i / 2];
    tensors.push_back({{"name", tensor_name(l, i / 2, i % 2 == 1)}, {"shape", model.weights()[i].shape}});
  }
  header["tensors"] = std::move(tensors);
  const std::string text = header.dump();

  detail::ByteWriter w;
  w.bytes("TIMW");
  w.put<std::uint16_t>(kWeightsVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(text.size()));
  w.bytes(text);
  for (const auto& t : model.weights())
    for (float v : t.values) w.put<float>(v);
  return std::move(w.str());
}

SurrogateModel deserialize_model(std::string_view bytes) {
  detail::ByteReader r(bytes, "TIMW");
  r.expect_magic("TIMW");
  const auto version = r.get<std::uint16_t>();
  if (version != kWeightsVersion) {
    throw Error(ErrorKind::FormatError, "TIMW: unsupported version " + std::to_string(version));
  }
  const auto header_len = r.get<std::uint32_t>();
  const nlohmann::json header = nlohmann::json::parse(r.bytes(header_len), nullptr, false);
  if (header.is_discarded() || !header.is_object()) {
    throw Error(ErrorKind::FormatError, "TIMW: header is not valid JSON");
  }
  try {
    const Hyperparams hp = hyperparams_from_json(header.at("hyperparams"));
    const auto res = header.at("resolution").get<std::vector<std::size_t>>();
    if (res.size() != 2) throw Error(ErrorKind::FormatError, "TIMW: resolution must be [H, W]");
    SurrogateModel model(hp, {res[0], res[1]}, header.at("input_scale").get<double>());
    const auto& listed = header.at("tensors");
    if (listed.size() != model.weights().size()) {
      throw Error(ErrorKind::FormatError, "TIMW: tensor count does not match hyperparameters");
    }
    for (std::size_t i = 0; i < listed.size(); ++i) {
      auto& t = model.weights()[i];
      if (listed[i].at("shape").get<std::vector<std::size_t>>() != t.shape) {
        throw Error(ErrorKind::FormatError, "TIMW: shape mismatch for tensor " + std::to_string(i));
      }
      for (float& v : t.values) {
        v = r.get<float>();
        if (!std::isfinite(v)) throw Error(ErrorKind::FormatError, "TIMW: non-finite weight");
      }
    }
    if (r.remaining() != 0) throw Error(ErrorKind::FormatError, "TIMW: trailing bytes");
    return model;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::FormatError, std::string("TIMW: bad header: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::InvalidArgument) throw Error(ErrorKind::FormatError, e.what());
    throw;
  }
}

void save_model(const SurrogateModel& model, const std::string& path) {
  detail::write_file(path, serialize_model(model));
}

SurrogateModel load_model(const std::string& path) {
  return deserialize_model(detail::read_file(path));
}

}  // namespace timflow
