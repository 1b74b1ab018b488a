#include "dbnet/weights.hpp"

#include "dbnet/io.hpp"

namespace dbnet {
namespace {

constexpr char kWeightsMagic[4] = {'D', 'B', 'N', 'W'};

FormatError malformed(const std::string& what) { return FormatError(FormatError::Kind::Malformed, what); }

}  // namespace

std::string encode_weights(const DbNet<float>& model, const Standardizer* standardizer) {
  nlohmann::json header{{"model", model.config()}};
  if (standardizer != nullptr) header["standardizer"] = *standardizer;
  const std::string header_text = header.dump();

  const ParamList<float> params = model.parameters();
  ByteWriter w;
  w.bytes(std::string_view(kWeightsMagic, 4));
  w.u16(kWeightsVersion);
  w.u32(static_cast<std::uint32_t>(header_text.size()));
  w.bytes(header_text);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const auto& p : params) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.bytes(p.name);
    w.u32(static_cast<std::uint32_t>(p.var.shape().size()));
    for (std::size_t d : p.var.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.var.value().data()) w.f32(v);
  }
  return w.take();
}

LoadedModel decode_weights(std::string_view bytes) {
  if (bytes.size() < 4 || bytes.substr(0, 4) != std::string_view(kWeightsMagic, 4)) {
    throw FormatError(FormatError::Kind::BadMagic, "bad magic: not a DBNW weights file");
  }
  ByteReader r(bytes.substr(4));
  const std::uint16_t version = r.u16("version");
  if (version != kWeightsVersion) {
    throw FormatError(FormatError::Kind::VersionMismatch,
                      "version mismatch: weights version " + std::to_string(version) + ", expected " +
                          std::to_string(kWeightsVersion));
  }
  const std::size_t header_len = r.u32("header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(r.bytes(header_len, "header"));
  } catch (const nlohmann::json::parse_error& e) {
    throw malformed(std::string("malformed weights header: ") + e.what());
  }
  if (!header.contains("model")) throw malformed("malformed weights header: no model config");
  const DbNetConfig config = header.at("model").get<DbNetConfig>();

  LoadedModel out{DbNet<float>(config, 0), std::nullopt};
  if (header.contains("standardizer")) out.standardizer = header.at("standardizer").get<Standardizer>();

  const ParamList<float> params = out.model.parameters();
  const std::size_t count = r.u32("tensor count");
  if (count != params.size()) {
    throw malformed("weights file holds " + std::to_string(count) + " tensors, model declares " +
                    std::to_string(params.size()));
  }
  for (const auto& p : params) {
    const std::string_view name = r.bytes(r.u32("name length"), "tensor name");
    if (name != p.name) {
      throw malformed("tensor order mismatch: expected '" + p.name + "', found '" + std::string(name) + "'");
    }
    Shape shape(r.u32("rank"));
    for (auto& d : shape) d = r.u32("extent");
    if (shape != p.var.shape()) {
      throw malformed("tensor '" + p.name + "' has shape " + shape_str(shape) + ", model expects " +
                      shape_str(p.var.shape()));
    }
    for (float& v : p.var.value().data()) v = r.f32("tensor values");
  }
  if (r.remaining() != 0) throw malformed(std::to_string(r.remaining()) + " trailing bytes after tensors");
  return out;
}

void save_weights(const DbNet<float>& model, const std::filesystem::path& path, const Standardizer* standardizer) {
  write_file_atomic(path, encode_weights(model, standardizer));
}

LoadedModel load_weights(const std::filesystem::path& path) { return decode_weights(read_file(path)); }

}  // namespace dbnet
