#include "vslnet/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>

namespace vslnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint IO assumes a little-endian host");

namespace {

template <class T>
void write_pod(std::ostream& os, T value) {
  os.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <class T>
T read_pod(std::istream& is, const std::filesystem::path& file) {
  T value{};
  is.read(reinterpret_cast<char*>(&value), sizeof(T));
  if (!is) throw DataError("checkpoint " + file.string() + ": truncated header");
  return value;
}

std::size_t element_size(DType dtype) { return dtype == DType::kFloat32 ? 4 : 8; }

}  // namespace

const Tensor* CheckpointContents::find(const std::string& path) const {
  for (const auto& [p, t] : tensors) {
    if (p == path) return &t;
  }
  return nullptr;
}

void write_checkpoint(const std::filesystem::path& file, const ParamStore& params,
                      const AdamState* adam, const nlohmann::json& metadata) {
  std::vector<std::pair<std::string, Tensor>> items(params.entries().begin(),
                                                    params.entries().end());
  nlohmann::json meta = metadata;
  if (adam) {
    for (std::size_t k = 0; k < params.size(); ++k) {
      items.emplace_back("adam/m/" + params.entries()[k].first, adam->first_moment[k]);
      items.emplace_back("adam/v/" + params.entries()[k].first, adam->second_moment[k]);
    }
    meta["adam_step"] = adam->step;
  }

  nlohmann::json manifest;
  manifest["metadata"] = meta;
  manifest["tensors"] = nlohmann::json::array();
  std::uint64_t offset = 0;
  for (const auto& [path, t] : items) {
    const std::uint64_t bytes = t.numel() * element_size(t.dtype());
    manifest["tensors"].push_back({{"path", path},
                                   {"shape", t.shape()},
                                   {"dtype", std::string(dtype_name(t.dtype()))},
                                   {"offset", offset},
                                   {"bytes", bytes}});
    offset += bytes;
  }
  const std::string text = manifest.dump();

  if (file.has_parent_path()) std::filesystem::create_directories(file.parent_path());
  std::ofstream os(file, std::ios::binary | std::ios::trunc);
  if (!os) throw DataError("cannot open checkpoint for writing: " + file.string());
  os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
  write_pod<std::uint32_t>(os, kCheckpointVersion);
  write_pod<std::uint32_t>(os, 0);
  write_pod<std::uint64_t>(os, text.size());
  os.write(text.data(), static_cast<std::streamsize>(text.size()));
  for (const auto& [_, t] : items) {
    detail::visit_dtype(t.dtype(), [&](auto tag) {
      using T = decltype(tag);
      auto d = t.data<T>();
      os.write(reinterpret_cast<const char*>(d.data()),
               static_cast<std::streamsize>(d.size() * sizeof(T)));
    });
  }
  if (!os) throw DataError("failed writing checkpoint " + file.string());
}

CheckpointContents read_checkpoint(const std::filesystem::path& file) {
  std::ifstream is(file, std::ios::binary);
  if (!is) throw DataError("checkpoint not found: " + file.string());
  char magic[8];
  is.read(magic, 8);
  if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0) {
    throw DataError("not a checkpoint file (bad magic): " + file.string());
  }
  const auto version = read_pod<std::uint32_t>(is, file);
  if (version != kCheckpointVersion) {
    throw DataError("unsupported checkpoint version " + std::to_string(version));
  }
  read_pod<std::uint32_t>(is, file);
  const auto manifest_len = read_pod<std::uint64_t>(is, file);
  std::string text(manifest_len, '\0');
  is.read(text.data(), static_cast<std::streamsize>(manifest_len));
  if (!is) throw DataError("checkpoint " + file.string() + ": truncated manifest");
  const auto manifest = nlohmann::json::parse(text);
  const std::streamoff payload_start = is.tellg();

  CheckpointContents out;
  out.metadata = manifest.at("metadata");
  for (const auto& entry : manifest.at("tensors")) {
    const auto shape = entry.at("shape").get<Shape>();
    const DType dtype = parse_dtype(entry.at("dtype").get<std::string>());
    const auto offset = entry.at("offset").get<std::uint64_t>();
    Tensor t = Tensor::zeros(shape, dtype);
    is.seekg(payload_start + static_cast<std::streamoff>(offset));
    detail::visit_dtype(dtype, [&](auto tag) {
      using T = decltype(tag);
      auto d = t.mutable_data<T>();
      is.read(reinterpret_cast<char*>(d.data()), static_cast<std::streamsize>(d.size() * sizeof(T)));
    });
    if (!is) throw DataError("checkpoint " + file.string() + ": truncated payload");
    out.tensors.emplace_back(entry.at("path").get<std::string>(), std::move(t));
  }
  return out;
}

void restore_params(const CheckpointContents& ckpt, ParamStore& params) {
  for (auto& [path, p] : params.entries()) {
    const Tensor* src = ckpt.find(path);
    if (!src) throw DataError("checkpoint is missing parameter '" + path + "'");
    if (src->shape() != p.shape()) {
      throw DataError("checkpoint parameter '" + path + "' has shape " + shape_str(src->shape()) +
                      ", model expects " + shape_str(p.shape()));
    }
    p.assign(src->values());
  }
}

void restore_adam(const CheckpointContents& ckpt, const ParamStore& params, AdamState& adam) {
  if (!ckpt.metadata.contains("adam_step")) throw DataError("checkpoint has no optimizer state");
  adam.step = ckpt.metadata.at("adam_step").get<std::size_t>();
  for (std::size_t k = 0; k < params.size(); ++k) {
    const auto& path = params.entries()[k].first;
    const Tensor* m = ckpt.find("adam/m/" + path);
    const Tensor* v = ckpt.find("adam/v/" + path);
    if (!m || !v) throw DataError("checkpoint is missing optimizer moments for '" + path + "'");
    adam.first_moment[k].assign(m->values());
    adam.second_moment[k].assign(v->values());
  }
}

}  // namespace vslnet
