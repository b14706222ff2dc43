#include "fedstain/wire.hpp"

#include <bit>
#include <cstring>

#include "fedstain/error.hpp"

namespace fedstain {

MessageType RoundMessage::type() const {
  return static_cast<MessageType>(body.index() + 1);
}

namespace {

class Writer {
 public:
  template <typename T>
  void integer(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i)
      bytes.push_back(static_cast<unsigned char>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xff));
  }
  void string(const std::string& s) {
    integer<std::uint32_t>(static_cast<std::uint32_t>(s.size()));
    bytes.insert(bytes.end(), s.begin(), s.end());
  }
  void array(const std::vector<double>& v) {
    integer<std::uint32_t>(static_cast<std::uint32_t>(v.size()));
    for (double d : v) integer<std::uint64_t>(std::bit_cast<std::uint64_t>(d));
  }
  std::vector<unsigned char> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const unsigned char> b) : bytes_(b) {}

  template <typename T>
  T integer() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= std::uint64_t(bytes_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  std::string string() {
    const auto n = integer<std::uint32_t>();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  std::vector<double> array() {
    const auto n = integer<std::uint32_t>();
    if (lengths) lengths->push_back(n);
    need(std::size_t(n) * 8);
    std::vector<double> v(n);
    for (auto& d : v) d = std::bit_cast<double>(integer<std::uint64_t>());
    return v;
  }
  bool done() const { return pos_ == bytes_.size(); }

  std::vector<std::size_t>* lengths = nullptr;

 private:
  void need(std::size_t n) const {
    if (pos_ + n > bytes_.size()) throw FormatError("truncated frame");
  }
  std::span<const unsigned char> bytes_;
  std::size_t pos_ = 0;
};

void write_record(Writer& w, const std::string& client, const std::string& sample,
                  ColorSpace cs, const ChannelStats& s,
                  const std::optional<GenericStatsPair>& extra) {
  w.string(client);
  w.string(sample);
  w.integer<std::uint8_t>(cs == ColorSpace::LAB ? 1 : 0);
  w.array(s.mean);
  w.array(s.std);
  w.array(s.skewness);
  w.array(s.kurtosis);
  w.integer<std::uint8_t>(extra ? 1 : 0);
  if (extra) {
    w.integer<std::uint8_t>(static_cast<std::uint8_t>(extra->kind));
    w.array(extra->shift);
    w.array(extra->scale);
  }
}

PoolView::Entry read_record(Reader& r) {
  PoolView::Entry e;
  e.client_id = r.string();
  e.sample_id = r.string();
  e.color_space = r.integer<std::uint8_t>() ? ColorSpace::LAB : ColorSpace::RGB;
  e.stats.mean = r.array();
  e.stats.std = r.array();
  e.stats.skewness = r.array();
  e.stats.kurtosis = r.array();
  if (r.integer<std::uint8_t>()) {
    GenericStatsPair p;
    const auto k = r.integer<std::uint8_t>();
    if (k > static_cast<std::uint8_t>(StatKind::SkewnessKurtosis))
      throw FormatError("unknown statistic kind in frame");
    p.kind = static_cast<StatKind>(k);
    p.shift = r.array();
    p.scale = r.array();
    e.extra_pair = std::move(p);
  }
  return e;
}

void write_params(Writer& w, const ModelParams& p) {
  w.integer<std::uint64_t>(p.layout.hash());
  w.array(p.encoder);
  w.array(p.classifier);
}

ModelParams read_params(Reader& r, const ModelLayout& layout, bool check) {
  const auto hash = r.integer<std::uint64_t>();
  ModelParams p;
  p.layout = layout;
  p.encoder = r.array();
  p.classifier = r.array();
  if (check && (hash != layout.hash() || p.encoder.size() != layout.encoder_size() ||
                p.classifier.size() != layout.classifier_size()))
    throw ShapeMismatch("parameter frame does not match the model layout");
  return p;
}

RoundMessage decode_impl(std::span<const unsigned char> frame, const ModelLayout* layout,
                         std::vector<std::size_t>* lengths) {
  Reader r(frame);
  r.lengths = lengths;
  const auto len = r.integer<std::uint32_t>();
  if (len + 4 != frame.size()) throw FormatError("frame length prefix does not match frame size");
  const auto type = r.integer<std::uint8_t>();
  RoundMessage m;
  m.round = static_cast<std::uint32_t>(r.integer<std::int32_t>());
  static const ModelLayout kNoLayout;
  const ModelLayout& lay = layout ? *layout : kNoLayout;
  switch (static_cast<MessageType>(type)) {
    case MessageType::StatUpload: {
      StatUpload u;
      u.client_id = r.string();
      const auto n = r.integer<std::uint32_t>();
      for (std::uint32_t i = 0; i < n; ++i) {
        auto e = read_record(r);
        u.records.push_back(StatRecord{e.client_id, e.sample_id, e.color_space, e.stats, e.extra_pair});
      }
      m.body = std::move(u);
      break;
    }
    case MessageType::PoolGrant: {
      PoolGrant g;
      g.client_id = r.string();
      const auto n = r.integer<std::uint32_t>();
      std::vector<PoolView::Entry> entries;
      for (std::uint32_t i = 0; i < n; ++i) entries.push_back(read_record(r));
      g.view = PoolView(std::move(entries));
      m.body = std::move(g);
      break;
    }
    case MessageType::GlobalBroadcast:
      m.body = GlobalBroadcast{read_params(r, lay, layout != nullptr)};
      break;
    case MessageType::ParamUpload: {
      ParamUpload u;
      u.client_id = r.string();
      u.n_samples = r.integer<std::uint64_t>();
      u.params = read_params(r, lay, layout != nullptr);
      m.body = std::move(u);
      break;
    }
    default:
      throw FormatError("unknown message type " + std::to_string(type));
  }
  if (!r.done()) throw FormatError("trailing bytes in frame");
  return m;
}

}  // namespace

std::vector<unsigned char> encode_frame(const RoundMessage& message) {
  Writer w;
  w.integer<std::uint32_t>(0);  // patched below
  w.integer<std::uint8_t>(static_cast<std::uint8_t>(message.type()));
  w.integer<std::int32_t>(static_cast<std::int32_t>(message.round));
  std::visit(
      [&w](const auto& body) {
        using T = std::decay_t<decltype(body)>;
        if constexpr (std::is_same_v<T, StatUpload>) {
          w.string(body.client_id);
          w.integer<std::uint32_t>(static_cast<std::uint32_t>(body.records.size()));
          for (const auto& rec : body.records)
            write_record(w, rec.client_id, rec.sample_id, rec.color_space, rec.stats, rec.extra_pair);
        } else if constexpr (std::is_same_v<T, PoolGrant>) {
          w.string(body.client_id);
          w.integer<std::uint32_t>(static_cast<std::uint32_t>(body.view.size()));
          for (const auto& e : body.view.entries())
            write_record(w, e.client_id, e.sample_id, e.color_space, e.stats, e.extra_pair);
        } else if constexpr (std::is_same_v<T, GlobalBroadcast>) {
          write_params(w, body.params);
        } else {
          w.string(body.client_id);
          w.integer<std::uint64_t>(body.n_samples);
          write_params(w, body.params);
        }
      },
      message.body);
  const auto len = static_cast<std::uint32_t>(w.bytes.size() - 4);
  for (std::size_t i = 0; i < 4; ++i) w.bytes[i] = static_cast<unsigned char>((len >> (8 * i)) & 0xff);
  return std::move(w.bytes);
}

RoundMessage decode_frame(std::span<const unsigned char> frame, const ModelLayout& layout) {
  return decode_impl(frame, &layout, nullptr);
}

std::vector<std::size_t> frame_array_lengths(std::span<const unsigned char> frame) {
  std::vector<std::size_t> lengths;
  decode_impl(frame, nullptr, &lengths);
  return lengths;
}

std::size_t expected_stat_frame_size(const RoundMessage& message) {
  std::size_t size = 4 + 1 + 4;
  auto record_size = [](const std::string& client, const std::string& sample,
                        const ChannelStats& s, const std::optional<GenericStatsPair>& extra) {
    std::size_t n = 4 + client.size() + 4 + sample.size() + 1;
    n += 4 * (4 + 8 * s.channel_count());
    n += 1;
    if (extra) n += 1 + 2 * (4 + 8 * extra->shift.size());
    return n;
  };
  if (const auto* u = std::get_if<StatUpload>(&message.body)) {
    size += 4 + u->client_id.size() + 4;
    for (const auto& r : u->records) size += record_size(r.client_id, r.sample_id, r.stats, r.extra_pair);
  } else if (const auto* g = std::get_if<PoolGrant>(&message.body)) {
    size += 4 + g->client_id.size() + 4;
    for (const auto& e : g->view.entries())
      size += record_size(e.client_id, e.sample_id, e.stats, e.extra_pair);
  } else {
    throw InvalidArgument("expected_stat_frame_size: not a statistic message");
  }
  return size;
}

void LoopbackTransport::send(const RoundMessage& message) {
  auto frame = encode_frame(message);
  total_bytes_ += frame.size();
  log_.push_back(frame);
  queue_.push_back(std::move(frame));
}

RoundMessage LoopbackTransport::receive() {
  if (queue_.empty()) throw ProtocolViolation("receive on an empty loopback channel");
  auto frame = std::move(queue_.front());
  queue_.pop_front();
  return decode_frame(frame, layout_);
}

RoundMessage LoopbackTransport::relay(const RoundMessage& message) {
  auto frame = encode_frame(message);
  total_bytes_ += frame.size();
  log_.push_back(frame);
  return decode_frame(frame, layout_);
}

}  // namespace fedstain
