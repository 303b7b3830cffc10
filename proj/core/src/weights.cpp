#include "cmro/weights.hpp"

#include <cstring>

#include "byte_io.hpp"

namespace cmro {

namespace {

struct Record {
  std::string name;
  Shape shape;
  std::vector<float> data;
};

const Record* find_record(const std::vector<Record>& records, const std::string& name) {
  for (const auto& r : records)
    if (r.name == name) return &r;
  return nullptr;
}

const Record& require_record(const std::vector<Record>& records, const std::string& name,
                             std::size_t rank) {
  const auto* r = find_record(records, name);
  if (!r) throw Error(Errc::architecture_mismatch, "weights file has no tensor '" + name + "'");
  if (r->shape.size() != rank)
    throw Error(Errc::architecture_mismatch, "tensor '" + name + "' has rank " +
                                                 std::to_string(r->shape.size()) + ", expected " +
                                                 std::to_string(rank));
  return *r;
}

}  // namespace

Architecture architecture_for(const PreprocConfig& cfg, std::size_t hidden) {
  Architecture a;
  a.in_channels = cfg.thresholds.size();
  a.input_rows = cfg.train_size.rows;
  a.input_cols = cfg.train_size.cols;
  a.hidden = hidden;
  return a;
}

void check_architecture(const ModelParams<float>& params, const Architecture& arch) {
  const auto layout = parameter_layout(arch);
  const auto& entries = params.entries();
  if (entries.size() != layout.size())
    throw Error(Errc::architecture_mismatch, "expected " + std::to_string(layout.size()) +
                                                 " tensors, found " + std::to_string(entries.size()));
  for (std::size_t i = 0; i < layout.size(); ++i) {
    if (entries[i].name != layout[i].name)
      throw Error(Errc::architecture_mismatch, "tensor " + std::to_string(i) + " is '" +
                                                   entries[i].name + "', expected '" +
                                                   layout[i].name + "'");
    if (entries[i].value.shape() != layout[i].shape)
      throw Error(Errc::architecture_mismatch,
                  "tensor '" + layout[i].name + "' has shape " +
                      shape_string(entries[i].value.shape()) + ", expected " +
                      shape_string(layout[i].shape));
  }
}

std::vector<std::uint8_t> encode_weights(const ModelParams<float>& params, const PreprocConfig& cfg,
                                         std::string_view modality) {
  if (modality.size() > 0xFFFF) throw Error(Errc::invalid_argument, "modality tag too long");
  detail::ByteWriter w;
  w.write_string("CMRO");
  w.write(kWeightsVersion);
  w.write(static_cast<std::uint16_t>(modality.size()));
  w.write_string(modality);
  const auto json = cfg.to_json();
  w.write(static_cast<std::uint32_t>(json.size()));
  w.write_string(json);
  w.write(static_cast<std::uint32_t>(params.entries().size()));
  for (const auto& e : params.entries()) {
    if (e.name.size() > 0xFFFF || e.value.rank() > 0xFF)
      throw Error(Errc::invalid_argument, "tensor '" + e.name + "' cannot be encoded");
    w.write(static_cast<std::uint16_t>(e.name.size()));
    w.write_string(e.name);
    w.write(static_cast<std::uint8_t>(e.value.rank()));
    for (auto d : e.value.shape()) w.write(static_cast<std::uint64_t>(d));
    for (float v : e.value.values()) w.write(v);
  }
  return std::move(w.bytes());
}

WeightsFile decode_weights(std::span<const std::uint8_t> bytes) {
  detail::ByteReader in(bytes);
  in.require(4, "weights header");
  if (std::memcmp(bytes.data(), "CMRO", 4) != 0)
    throw Error(Errc::bad_magic, "not a weights file (magic is not \"CMRO\")");
  in.seek(4);
  const auto version = in.read<std::uint32_t>("weights version");
  if (version != kWeightsVersion)
    throw Error(Errc::version_mismatch, "weights format version " + std::to_string(version) +
                                            " is not supported (expected " +
                                            std::to_string(kWeightsVersion) + ")");
  WeightsFile out;
  const auto mod_len = in.read<std::uint16_t>("modality length");
  const auto mod = in.take(mod_len, "modality tag");
  out.modality.assign(mod.begin(), mod.end());
  const auto cfg_len = in.read<std::uint32_t>("config length");
  const auto cfg = in.take(cfg_len, "preprocessing config");
  out.preprocess = PreprocConfig::from_json(std::string(cfg.begin(), cfg.end()));

  const auto count = in.read<std::uint32_t>("tensor count");
  std::vector<Record> records;
  for (std::uint32_t i = 0; i < count; ++i) {
    Record r;
    const auto name_len = in.read<std::uint16_t>("name length of tensor #" + std::to_string(i));
    const auto name = in.take(name_len, "name of tensor #" + std::to_string(i));
    r.name.assign(name.begin(), name.end());
    const std::string what = "record for tensor '" + r.name + "'";
    const auto rank = in.read<std::uint8_t>(what);
    std::size_t n = 1;
    for (std::uint8_t k = 0; k < rank; ++k) {
      const auto d = in.read<std::uint64_t>(what);
      if (d == 0 || d > (std::uint64_t{1} << 32))
        throw Error(Errc::invalid_argument, "tensor '" + r.name + "' has invalid extent " + std::to_string(d));
      r.shape.push_back(static_cast<std::size_t>(d));
      n *= static_cast<std::size_t>(d);
      if (n > (std::size_t{1} << 34)) throw Error(Errc::invalid_argument, "tensor '" + r.name + "' is too large");
    }
    in.require(n * sizeof(float), what);
    r.data.resize(n);
    for (auto& v : r.data) v = in.read<float>(what);
    records.push_back(std::move(r));
  }

  // Architecture from tensor shapes, then an exact layout check.
  Architecture arch = architecture_for(out.preprocess);
  for (std::size_t b = 0; b < kConvBlocks; ++b) {
    const auto& k = require_record(records, "backbone." + std::to_string(b) + ".conv.weight", 4);
    arch.conv_channels[b] = k.shape[0];
    if (b == 0) arch.kernel_size = k.shape[2];
  }
  const auto& fc0 = require_record(records, "head.0.weight", 2);
  const auto& fc1 = require_record(records, "head.1.weight", 2);
  arch.hidden = fc0.shape[0];
  arch.classes = fc1.shape[0];
  try {
    arch.validate();
  } catch (const Error& e) {
    throw Error(Errc::architecture_mismatch, e.what());
  }

  const auto layout = parameter_layout(arch);
  if (records.size() != layout.size())
    throw Error(Errc::architecture_mismatch, "weights file holds " + std::to_string(records.size()) +
                                                 " tensors, architecture needs " +
                                                 std::to_string(layout.size()));
  std::vector<ParamEntry<float>> entries;
  for (std::size_t i = 0; i < layout.size(); ++i) {
    const auto& slot = layout[i];
    const auto& r = records[i];
    if (r.name != slot.name)
      throw Error(Errc::architecture_mismatch, "tensor #" + std::to_string(i) + " is '" + r.name +
                                                   "', expected '" + slot.name + "'");
    if (r.shape != slot.shape)
      throw Error(Errc::architecture_mismatch, "tensor '" + r.name + "' has shape " +
                                                   shape_string(r.shape) + ", expected " +
                                                   shape_string(slot.shape));
    entries.push_back({slot.name, slot.role, slot.part, Tensor(r.shape, r.data), false});
  }
  out.params = ModelParams<float>(arch, std::move(entries));
  return out;
}

void write_weights(const ModelParams<float>& params, const PreprocConfig& cfg,
                   std::string_view modality, const std::filesystem::path& path) {
  detail::write_file(path, encode_weights(params, cfg, modality));
}

WeightsFile read_weights(const std::filesystem::path& path) {
  const auto bytes = detail::read_file(path);
  try {
    return decode_weights(bytes);
  } catch (const Error& e) {
    throw Error(e.code(), path.string() + ": " + e.what());
  }
}

}  // namespace cmro
