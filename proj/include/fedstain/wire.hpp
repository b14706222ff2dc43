#pragma once

#include <cstdint>
#include <deque>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "fedstain/nn.hpp"
#include "fedstain/stain_stats.hpp"

namespace fedstain {

struct StatUpload {
  std::string client_id;
  std::vector<StatRecord> records;
};

struct PoolGrant {
  std::string client_id;
  PoolView view;
};

struct GlobalBroadcast {
  ModelParams params;
};

struct ParamUpload {
  std::string client_id;
  ModelParams params;
  std::uint64_t n_samples = 0;
};

enum class MessageType : std::uint8_t {
  StatUpload = 1,
  PoolGrant = 2,
  GlobalBroadcast = 3,
  ParamUpload = 4,
};

struct RoundMessage {
  std::uint32_t round = 0;
  std::variant<StatUpload, PoolGrant, GlobalBroadcast, ParamUpload> body;

  MessageType type() const;
};

// Frame layout (little endian):
//   u32 length of everything after this field
//   u8  message type
//   i32 round
//   payload
// Payload primitives: strings and float64 arrays are u32-count prefixed.
std::vector<unsigned char> encode_frame(const RoundMessage& message);
/// `layout` is attached to decoded parameter vectors; its hash must match
/// the one carried in the frame.
RoundMessage decode_frame(std::span<const unsigned char> frame, const ModelLayout& layout);

/// Every float64 array length that appears in a frame, in order. Used by the
/// privacy audit: none may equal an image's H*W or C*H*W.
std::vector<std::size_t> frame_array_lengths(std::span<const unsigned char> frame);

/// Exact payload size of a StatUpload / PoolGrant frame, derived from the
/// schema alone.
std::size_t expected_stat_frame_size(const RoundMessage& message);

/// Byte-level loopback channel: every message is encoded, stored and decoded
/// on receipt, and a copy of every frame is kept for auditing.
class LoopbackTransport {
 public:
  explicit LoopbackTransport(ModelLayout layout) : layout_(std::move(layout)) {}

  void send(const RoundMessage& message);
  bool empty() const noexcept { return queue_.empty(); }
  RoundMessage receive();
  /// Encode and decode in one go (used for point-to-point delivery).
  RoundMessage relay(const RoundMessage& message);

  const std::vector<std::vector<unsigned char>>& frames() const noexcept { return log_; }
  std::size_t total_bytes() const noexcept { return total_bytes_; }

 private:
  ModelLayout layout_;
  std::deque<std::vector<unsigned char>> queue_;
  std::vector<std::vector<unsigned char>> log_;
  std::size_t total_bytes_ = 0;
};

}  // namespace fedstain
