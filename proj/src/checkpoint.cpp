#include "mlso/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

#include "mlso/errors.hpp"

namespace mlso {

namespace {

static_assert(std::endian::native == std::endian::little,
              "checkpoint writer assumes a little-endian host");

std::string shape_token(const Shape& shape) {
  if (shape.empty()) return "1";
  std::ostringstream os;
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << "x";
    os << shape[i];
  }
  return os.str();
}

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const ParamSet& params) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw CheckpointError("cannot write checkpoint: " + path.string());
  out << "mlso-ckpt v1";
  for (const auto& [name, tensor] : params.items()) {
    out << " " << name << "=" << shape_token(tensor.shape());
  }
  out << "\n";
  for (const auto& [name, tensor] : params.items()) {
    out.write(reinterpret_cast<const char*>(tensor.data().data()),
              static_cast<std::streamsize>(tensor.size() * sizeof(double)));
  }
  if (!out) throw CheckpointError("checkpoint write failed: " + path.string());
}

void load_checkpoint(const std::filesystem::path& path, ParamSet& params) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("cannot open checkpoint: " + path.string());
  std::string header;
  if (!std::getline(in, header)) throw CheckpointError("checkpoint missing header line");
  std::istringstream hs(header);
  std::string magic, version;
  hs >> magic >> version;
  if (magic != "mlso-ckpt" || version != "v1") {
    throw CheckpointError("unrecognized checkpoint header");
  }
  std::vector<std::string> tokens;
  for (std::string tok; hs >> tok;) tokens.push_back(tok);
  if (tokens.size() != params.size()) {
    throw CheckpointError("checkpoint lists " + std::to_string(tokens.size()) +
                          " parameters, model has " + std::to_string(params.size()));
  }
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    const auto& [name, tensor] = params.items()[i];
    const std::string expected = name + "=" + shape_token(tensor.shape());
    if (tokens[i] != expected) {
      throw CheckpointError("checkpoint parameter mismatch: expected '" + expected + "', found '" +
                            tokens[i] + "'");
    }
  }
  for (const auto& [name, tensor] : params.items()) {
    Tensor t = tensor;
    in.read(reinterpret_cast<char*>(t.raw().data()),
            static_cast<std::streamsize>(t.size() * sizeof(double)));
    if (!in) throw CheckpointError("checkpoint truncated while reading " + name);
  }
  char extra;
  if (in.read(&extra, 1)) throw CheckpointError("checkpoint has trailing bytes");
}

}  // namespace mlso
