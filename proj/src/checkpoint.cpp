#include "spg/checkpoint.hpp"

#include <bit>
#include <fstream>
#include <iterator>
#include <sstream>

#include <json.hpp>

#include "spg/errors.hpp"
#include "spg/rng.hpp"

namespace spg {

namespace {

using nlohmann::json;

constexpr const char* kFormat = "spg-checkpoint";

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << v;
  return os.str();
}

std::uint64_t parse_hex64(const std::string& s) {
  std::size_t used = 0;
  const auto v = std::stoull(s, &used, 16);
  if (used != s.size()) throw std::invalid_argument("hex");
  return v;
}

CheckpointError corrupt(const std::string& path, const std::string& why) {
  return CheckpointError(CheckpointError::Kind::corrupt, "checkpoint '" + path + "' is corrupt: " + why);
}

struct Writer {
  std::vector<double> values;

  void put(double v) { values.push_back(v); }
  void put(const Vector& v) { values.insert(values.end(), v.data(), v.data() + v.size()); }
  void put(const LayerParams& p) { put(flatten(p)); }
};

class Reader {
 public:
  explicit Reader(std::vector<double> v) : values_(std::move(v)) {}

  double get() {
    need(1);
    return values_[pos_++];
  }
  Vector get(Index n) {
    need(static_cast<std::size_t>(n));
    Vector v = Eigen::Map<const Vector>(values_.data() + pos_, n);
    pos_ += static_cast<std::size_t>(n);
    return v;
  }
  LayerParams get_layer(Index out, Index in) {
    LayerParams p = LayerParams::zeros(out, in);
    assign_flat(p, get(p.size()));
    return p;
  }
  bool done() const { return pos_ == values_.size(); }

 private:
  void need(std::size_t n) const {
    if (pos_ + n > values_.size()) throw std::out_of_range("payload");
  }
  std::vector<double> values_;
  std::size_t pos_ = 0;
};

std::string encode(const std::vector<double>& values) {
  std::string out(values.size() * 8, '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const auto bits = std::bit_cast<std::uint64_t>(values[i]);
    for (int b = 0; b < 8; ++b) out[i * 8 + b] = static_cast<char>((bits >> (8 * b)) & 0xff);
  }
  return out;
}

std::vector<double> decode(std::string_view bytes) {
  std::vector<double> values(bytes.size() / 8);
  for (std::size_t i = 0; i < values.size(); ++i) {
    std::uint64_t bits = 0;
    for (int b = 0; b < 8; ++b) bits |= std::uint64_t{static_cast<unsigned char>(bytes[i * 8 + b])} << (8 * b);
    values[i] = std::bit_cast<double>(bits);
  }
  return values;
}

json shape_of(const LayerParams& p) { return json::array({p.out_dim(), p.in_dim()}); }

}  // namespace

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  Writer w;
  json h;
  h["format"] = kFormat;
  h["version"] = kCheckpointVersion;
  h["config_hash"] = hex64(ckpt.config_hash);
  h["tasks_done"] = ckpt.tasks_done;

  json extractor = json::array();
  for (const auto& l : ckpt.model.extractor.layers) {
    extractor.push_back(shape_of(l));
    w.put(l);
  }
  h["extractor"] = extractor;

  json heads = json::array();
  for (const auto& [id, head] : ckpt.model.heads) {
    heads.push_back({{"id", id}, {"shape", shape_of(head)}});
    w.put(head);
  }
  h["heads"] = heads;

  json imp_sizes = json::array();
  for (const auto& v : ckpt.importance.per_layer) {
    imp_sizes.push_back(v.size());
    w.put(v);
  }
  w.put(ckpt.importance.mean_importance);
  h["importance"] = {{"sizes", imp_sizes}, {"tasks_seen", ckpt.importance.tasks_seen}};

  h["ewc"] = ckpt.ewc.has_value();
  if (ckpt.ewc) {
    for (const auto& l : ckpt.ewc->anchor) w.put(l);
    for (const auto& v : ckpt.ewc->omega) w.put(v);
  }

  const int T = ckpt.accuracy.tasks();
  json present = json::array();
  for (int j = 1; j <= T; ++j)
    for (int i = 1; i <= j; ++i)
      if (ckpt.accuracy.has(i, j)) {
        present.push_back({i, j});
        w.put(ckpt.accuracy.at(i, j));
      }
  h["accuracy"] = {{"tasks", T}, {"present", present}};

  json blocked = json::array();
  for (const auto& b : ckpt.blocked_history) {
    blocked.push_back(b.per_layer.size());
    for (double v : b.per_layer) w.put(v);
    w.put(b.total);
  }
  h["blocked"] = blocked;

  json chi = json::array();
  for (const auto& c : ckpt.chi_history) {
    if (!c) {
      chi.push_back(nullptr);
      continue;
    }
    chi.push_back({{"each_empty", c->each_empty}, {"total_empty", c->total_empty}});
    for (double v : {c->f_each, c->g_each, c->f_total, c->g_total}) w.put(v);
  }
  h["chi"] = chi;

  h["hard_blocked"] = ckpt.hard_blocked_history.size();
  for (double v : ckpt.hard_blocked_history) w.put(v);

  const std::string payload = encode(w.values);
  h["payload_doubles"] = w.values.size();
  h["payload_fnv1a"] = hex64(fnv1a(payload));

  const auto tmp = std::filesystem::path(path.string() + ".tmp");
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint '" + path.string() + "'");
    out << h.dump() << '\n';
    out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
    if (!out) throw CheckpointError(CheckpointError::Kind::io, "cannot write checkpoint '" + path.string() + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw CheckpointError(CheckpointError::Kind::io, "cannot move checkpoint into place: " + ec.message());
}

Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<std::uint64_t> expected_hash) {
  const std::string where = path.string();
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError(CheckpointError::Kind::io, "cannot open checkpoint '" + where + "'");
  const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const auto newline = bytes.find('\n');
  if (newline == std::string::npos) throw corrupt(where, "missing header");

  Checkpoint c;
  try {
    const json h = json::parse(bytes.substr(0, newline));
    if (h.at("format").get<std::string>() != kFormat) throw corrupt(where, "not a checkpoint file");
    if (h.at("version").get<int>() != kCheckpointVersion) throw corrupt(where, "unsupported version");

    const std::string_view payload = std::string_view(bytes).substr(newline + 1);
    const auto n_doubles = h.at("payload_doubles").get<std::size_t>();
    if (payload.size() != n_doubles * 8) throw corrupt(where, "payload size does not match the header");
    if (parse_hex64(h.at("payload_fnv1a").get<std::string>()) != fnv1a(payload))
      throw corrupt(where, "payload checksum mismatch");

    c.config_hash = parse_hex64(h.at("config_hash").get<std::string>());
    if (expected_hash && *expected_hash != c.config_hash)
      throw CheckpointError(CheckpointError::Kind::hash_mismatch,
                            "checkpoint '" + where + "' was written by a different configuration (hash " +
                                hex64(c.config_hash) + ", expected " + hex64(*expected_hash) +
                                "); refusing to resume");
    c.tasks_done = h.at("tasks_done").get<int>();

    Reader r(decode(payload));
    for (const auto& s : h.at("extractor")) {
      c.model.extractor.layers.push_back(r.get_layer(s.at(0).get<Index>(), s.at(1).get<Index>()));
      c.model.extractor.activations.push_back(Activation::relu);
    }
    for (const auto& e : h.at("heads")) {
      const auto& s = e.at("shape");
      c.model.heads.emplace(e.at("id").get<int>(), r.get_layer(s.at(0).get<Index>(), s.at(1).get<Index>()));
    }
    for (const auto& n : h.at("importance").at("sizes")) c.importance.per_layer.push_back(r.get(n.get<Index>()));
    c.importance.mean_importance = r.get();
    c.importance.tasks_seen = h.at("importance").at("tasks_seen").get<int>();

    if (h.at("ewc").get<bool>()) {
      EwcState e;
      for (const auto& l : c.model.extractor.layers) e.anchor.push_back(r.get_layer(l.out_dim(), l.in_dim()));
      for (const auto& l : c.model.extractor.layers) e.omega.push_back(r.get(l.size()));
      c.ewc = std::move(e);
    }

    c.accuracy = AccuracyMatrix(h.at("accuracy").at("tasks").get<int>());
    for (const auto& p : h.at("accuracy").at("present")) c.accuracy.set(p.at(0).get<int>(), p.at(1).get<int>(), r.get());

    for (const auto& n : h.at("blocked")) {
      BlockedFraction b;
      for (std::size_t i = 0; i < n.get<std::size_t>(); ++i) b.per_layer.push_back(r.get());
      b.total = r.get();
      c.blocked_history.push_back(std::move(b));
    }
    for (const auto& e : h.at("chi")) {
      if (e.is_null()) {
        c.chi_history.emplace_back();
        continue;
      }
      ChiStats s;
      s.each_empty = e.at("each_empty").get<bool>();
      s.total_empty = e.at("total_empty").get<bool>();
      s.f_each = r.get();
      s.g_each = r.get();
      s.f_total = r.get();
      s.g_total = r.get();
      c.chi_history.push_back(s);
    }
    for (std::size_t i = 0; i < h.at("hard_blocked").get<std::size_t>(); ++i) c.hard_blocked_history.push_back(r.get());
    if (!r.done()) throw corrupt(where, "payload has trailing values");
  } catch (const CheckpointError&) {
    throw;
  } catch (const std::exception& e) {
    throw corrupt(where, e.what());
  }
  return c;
}

}  // namespace spg
