#pragma once

// Checkpoint container: a text manifest followed by one FTNS blob per
// tensor.
//
//   AGENET-CKPT 1
//   model <name>
//   spec_hash <16 hex digits>
//   meta <key> <value...>          (zero or more)
//   tensor <name> <byte length>    (one per stored tensor)
//   end
//   <FTNS blobs in manifest order>

#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "agenet/error.hpp"
#include "agenet/ftns.hpp"
#include "agenet/model_spec.hpp"
#include "agenet/network.hpp"

namespace agenet {

inline constexpr const char* kCheckpointMagic = "AGENET-CKPT";
inline constexpr int kCheckpointVersion = 1;

using CheckpointMeta = std::map<std::string, std::string>;

struct CheckpointHeader {
  std::string model;
  std::uint64_t spec_hash = 0;
  CheckpointMeta meta;
  std::vector<std::pair<std::string, std::size_t>> tensors;
};

template <typename T>
void save_checkpoint(const Network<T>& net, const std::string& path, const CheckpointMeta& meta = {}) {
  const NamedTensors<T> state = net.state();
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot open '" + path + "' for writing");
  os << kCheckpointMagic << ' ' << kCheckpointVersion << '\n';
  os << "model " << net.spec().name << '\n';
  os << "spec_hash " << hex64(spec_hash(net.spec())) << '\n';
  for (const auto& [k, v] : meta) {
    if (k.empty() || k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
      throw std::invalid_argument("checkpoint meta entries need a single-word key and a one-line value");
    }
    os << "meta " << k << ' ' << v << '\n';
  }
  for (const auto& [name, t] : state) os << "tensor " << name << ' ' << ftns::encoded_size<T>(t.shape()) << '\n';
  os << "end\n";
  for (const auto& [name, t] : state) ftns::write(os, t);
  if (!os) throw std::runtime_error("write to '" + path + "' failed");
}

namespace detail {

inline CheckpointHeader read_checkpoint_header(std::istream& is, const std::string& path) {
  auto bad = [&](const std::string& why) { return CorruptFileError("checkpoint '" + path + "': " + why); };
  std::string line;
  if (!std::getline(is, line)) throw bad("empty file");
  {
    std::istringstream ls(line);
    std::string magic;
    int version = 0;
    ls >> magic >> version;
    if (magic != kCheckpointMagic) throw bad("bad magic");
    if (version != kCheckpointVersion) throw bad("unsupported version " + std::to_string(version));
  }
  CheckpointHeader h;
  bool have_hash = false, ended = false;
  while (std::getline(is, line)) {
    if (line == "end") {
      ended = true;
      break;
    }
    const auto sp = line.find(' ');
    const std::string key = line.substr(0, sp);
    const std::string rest = sp == std::string::npos ? "" : line.substr(sp + 1);
    if (key == "model") {
      h.model = rest;
    } else if (key == "spec_hash") {
      try {
        h.spec_hash = std::stoull(rest, nullptr, 16);
      } catch (const std::exception&) {
        throw bad("malformed spec_hash");
      }
      have_hash = true;
    } else if (key == "meta") {
      const auto s2 = rest.find(' ');
      h.meta[rest.substr(0, s2)] = s2 == std::string::npos ? "" : rest.substr(s2 + 1);
    } else if (key == "tensor") {
      std::istringstream ls(rest);
      std::string name;
      std::size_t bytes = 0;
      if (!(ls >> name >> bytes)) throw bad("malformed tensor entry '" + line + "'");
      h.tensors.emplace_back(name, bytes);
    } else {
      throw bad("unknown manifest line '" + line + "'");
    }
  }
  if (!ended) throw bad("manifest not terminated");
  if (!have_hash) throw bad("no spec_hash");
  return h;
}

}  // namespace detail

inline CheckpointHeader read_checkpoint_header(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  return detail::read_checkpoint_header(is, path);
}

/// Loads a checkpoint into a network built from `spec`. Rejects a checkpoint
/// written for a different layer list.
template <typename T>
Network<T> load_checkpoint(const std::string& path, const ModelSpec& spec, CheckpointMeta* meta_out = nullptr) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open '" + path + "'");
  const CheckpointHeader h = detail::read_checkpoint_header(is, path);
  if (h.spec_hash != spec_hash(spec)) {
    throw CorruptFileError("checkpoint '" + path + "' was written for model '" + h.model + "' (hash " +
                           hex64(h.spec_hash) + "), not '" + spec.name + "' (hash " + hex64(spec_hash(spec)) + ")");
  }
  NamedTensors<T> state;
  for (const auto& [name, bytes] : h.tensors) {
    const auto start = is.tellg();
    Tensor<T> t = ftns::read<T>(is);
    if (static_cast<std::size_t>(is.tellg() - start) != bytes) {
      throw CorruptFileError("checkpoint '" + path + "': tensor '" + name + "' length disagrees with manifest");
    }
    if (!state.emplace(name, std::move(t)).second) {
      throw CorruptFileError("checkpoint '" + path + "': duplicate tensor '" + name + "'");
    }
  }
  Network<T> net(spec, 0);
  net.load_state(state);
  if (meta_out) *meta_out = h.meta;
  return net;
}

}  // namespace agenet
