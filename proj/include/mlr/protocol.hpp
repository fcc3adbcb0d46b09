#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace mlr::proto {

// Frame layout: magic "MLR1", msg_type u8, payload_len u32 LE, payload.
inline constexpr char kMagic[4] = {'M', 'L', 'R', '1'};
inline constexpr std::size_t kHeaderSize = 9;
inline constexpr std::size_t kMaxPayload = 1u << 26;
inline constexpr std::uint32_t kMaxKeyDim = 4096;

enum class MsgType : std::uint8_t {
  query_batch = 1,
  query_resp = 2,
  insert_batch = 3,
  insert_ack = 4,
  error = 5,
  ping = 6,
  pong = 7,
};

enum class ErrCode : std::uint16_t {
  dim_mismatch = 1,
  malformed = 2,
  overload = 3,
};

struct QueryItem {
  std::uint32_t corr_id = 0;
  std::vector<float> key;
};
struct QueryBatch {
  float tau = 0.0f;
  std::uint16_t nprobe = 0;
  std::vector<QueryItem> items;
};

struct QueryRespItem {
  std::uint32_t corr_id = 0;
  bool hit = false;
  float cs = 0.0f;
  std::vector<std::uint8_t> value;  // empty on miss
};
struct QueryResp {
  std::vector<QueryRespItem> items;
};

struct InsertEntry {
  std::vector<float> key;
  std::vector<std::uint8_t> value;
};
struct InsertBatch {
  std::vector<InsertEntry> entries;
};

struct InsertAck {
  std::uint16_t count = 0;
};

struct ErrorMsg {
  std::uint16_t code = 0;
  std::string message;
};

struct Ping {};

struct Pong {
  std::uint64_t key_count = 0;  // server-side stored key count
};

using Message =
    std::variant<QueryBatch, QueryResp, InsertBatch, InsertAck, ErrorMsg, Ping, Pong>;

MsgType type_of(const Message& msg);

/// Serializes one message as a complete frame.
std::vector<std::uint8_t> encode(const Message& msg);

struct DecodeResult {
  enum class Status { ok, need_more, malformed };
  Status status = Status::need_more;
  Message msg;
  /// Bytes consumed from the buffer; on a malformed payload under a valid
  /// header this still spans the whole frame so a server can skip it.
  std::size_t consumed = 0;
  /// False when the 9-byte header itself is unusable (resync impossible).
  bool header_ok = false;
  std::string error;
};

/// Decodes the first frame from the buffer, tolerating partial input.
DecodeResult decode(std::span<const std::uint8_t> buf);

}  // namespace mlr::proto
