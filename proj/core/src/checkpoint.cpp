#include "anerf/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <nlohmann/json.hpp>

namespace anerf {

namespace {

static_assert(std::endian::native == std::endian::little, "checkpoint blobs assume a little-endian host");

template <typename T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <typename T>
T take(const std::string& in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw ContractError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

void put_doubles(std::string& blob, const std::vector<real>& values) {
  for (real v : values) put<double>(blob, static_cast<double>(v));
}

}  // namespace

std::string serialize_checkpoint(const Checkpoint& ck) {
  const TrainState& st = ck.state;
  nlohmann::json index;
  index["config"] = config_text(ck.config);
  index["config_hash"] = config_hash(ck.config);
  index["stage"] = ck.stage;
  index["actor"] = ck.actor;
  index["step"] = st.step;
  index["rng"] = st.rng.state();
  index["support"] = st.support;
  index["adam_steps"] = st.adam.steps();
  nlohmann::json frozen = nlohmann::json::array();
  for (const auto& g : kGroupNames)
    if (st.model.frozen(g)) frozen.push_back(g);
  index["frozen"] = frozen;

  std::string blob;
  nlohmann::json tensors = nlohmann::json::array();
  for (const auto& g : st.model.groups()) {
    for (const auto& p : g.params) {
      const auto v = p.value.values();
      tensors.push_back({{"name", g.name + "/" + p.name},
                         {"shape", p.value.shape()},
                         {"offset", blob.size()},
                         {"count", v.size()}});
      put_doubles(blob, std::vector<real>(v.begin(), v.end()));
    }
  }
  index["tensors"] = tensors;
  nlohmann::json moments = nlohmann::json::array();
  for (const auto& [name, m] : st.adam.state()) {
    const auto m_offset = blob.size();
    put_doubles(blob, m.m);
    const auto v_offset = blob.size();
    put_doubles(blob, m.v);
    moments.push_back({{"name", name}, {"count", m.m.size()}, {"m_offset", m_offset}, {"v_offset", v_offset}});
  }
  index["adam_moments"] = moments;

  const std::string text = index.dump();
  std::string out(kCheckpointMagic.begin(), kCheckpointMagic.end());
  put<std::uint32_t>(out, kCheckpointVersion);
  put<std::uint64_t>(out, text.size());
  out += text;
  out += blob;
  return out;
}

Checkpoint deserialize_checkpoint(const std::string& bytes) {
  if (bytes.size() < kCheckpointMagic.size() ||
      std::memcmp(bytes.data(), kCheckpointMagic.data(), kCheckpointMagic.size()) != 0) {
    throw ContractError("not a checkpoint file (bad magic)");
  }
  std::size_t pos = kCheckpointMagic.size();
  const auto version = take<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion) throw ContractError("unsupported checkpoint version " + std::to_string(version));
  const auto len = take<std::uint64_t>(bytes, pos);
  if (pos + len > bytes.size()) throw ContractError("checkpoint truncated");
  const auto index = nlohmann::json::parse(bytes.substr(pos, len));
  const std::size_t base = pos + len;
  auto doubles = [&](std::size_t offset, std::size_t count) {
    std::size_t p = base + offset;
    if (p + count * sizeof(double) > bytes.size()) throw ContractError("checkpoint truncated");
    std::vector<real> v(count);
    for (auto& x : v) x = static_cast<real>(take<double>(bytes, p));
    return v;
  };

  Checkpoint ck;
  apply_config_text(ck.config, index.at("config").get<std::string>());
  ck.stage = index.at("stage").get<std::string>();
  ck.actor = index.at("actor").get<std::string>();
  TrainState& st = ck.state;
  st.model = SceneModel(ck.config.model, ck.config.seed);
  std::map<std::string, std::vector<real>> values;
  for (const auto& t : index.at("tensors")) {
    values[t.at("name").get<std::string>()] = doubles(t.at("offset").get<std::size_t>(), t.at("count").get<std::size_t>());
  }
  st.model.load_parameters(values);
  for (const auto& g : index.at("frozen")) st.model.set_frozen(g.get<std::string>(), true);
  st.adam = Adam(ck.config.train.adam);
  st.adam.set_steps(index.at("adam_steps").get<std::int64_t>());
  for (const auto& m : index.at("adam_moments")) {
    const auto count = m.at("count").get<std::size_t>();
    auto& slot = st.adam.state()[m.at("name").get<std::string>()];
    slot.m = doubles(m.at("m_offset").get<std::size_t>(), count);
    slot.v = doubles(m.at("v_offset").get<std::size_t>(), count);
  }
  st.rng.set_state(index.at("rng").get<std::string>());
  st.step = index.at("step").get<std::int64_t>();
  st.support = index.at("support").get<std::vector<int>>();
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  write_file_atomic(path, serialize_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return deserialize_checkpoint(read_file(path)); }

}  // namespace anerf
