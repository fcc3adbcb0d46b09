#include "mlr/protocol.hpp"

#include <cstring>
#include <stdexcept>

#include "mlr/binio.hpp"

namespace mlr::proto {

namespace {

void encode_payload(const QueryBatch& m, ByteWriter& w) {
  w.f32(m.tau);
  w.u16(m.nprobe);
  w.u16(static_cast<std::uint16_t>(m.items.size()));
  for (const QueryItem& it : m.items) {
    w.u32(it.corr_id);
    w.u32(static_cast<std::uint32_t>(it.key.size()));
    for (float v : it.key) w.f32(v);
  }
}

void encode_payload(const QueryResp& m, ByteWriter& w) {
  w.u16(static_cast<std::uint16_t>(m.items.size()));
  for (const QueryRespItem& it : m.items) {
    w.u32(it.corr_id);
    w.u8(it.hit ? 1 : 0);
    w.f32(it.cs);
    w.u64(it.value.size());
    w.raw(it.value.data(), it.value.size());
  }
}

void encode_payload(const InsertBatch& m, ByteWriter& w) {
  w.u16(static_cast<std::uint16_t>(m.entries.size()));
  for (const InsertEntry& e : m.entries) {
    w.u32(static_cast<std::uint32_t>(e.key.size()));
    for (float v : e.key) w.f32(v);
    w.u64(e.value.size());
    w.raw(e.value.data(), e.value.size());
  }
}

void encode_payload(const InsertAck& m, ByteWriter& w) { w.u16(m.count); }

void encode_payload(const ErrorMsg& m, ByteWriter& w) {
  w.u16(m.code);
  w.raw(m.message.data(), m.message.size());
}

void encode_payload(const Ping&, ByteWriter&) {}

void encode_payload(const Pong& m, ByteWriter& w) { w.u64(m.key_count); }

std::vector<float> read_key(ByteReader& r) {
  const std::uint32_t dim = r.u32();
  if (dim == 0 || dim > kMaxKeyDim) throw std::runtime_error("key_dim out of range");
  std::vector<float> key(dim);
  for (float& v : key) v = r.f32();
  return key;
}

std::vector<std::uint8_t> read_value(ByteReader& r) {
  const std::uint64_t len = r.u64();
  if (len > r.remaining()) throw std::runtime_error("value_len exceeds payload");
  std::vector<std::uint8_t> v(static_cast<std::size_t>(len));
  r.raw(v.data(), v.size());
  return v;
}

Message decode_payload(MsgType type, std::span<const std::uint8_t> payload) {
  ByteReader r(payload);
  Message msg;
  switch (type) {
    case MsgType::query_batch: {
      QueryBatch m;
      m.tau = r.f32();
      m.nprobe = r.u16();
      const std::uint16_t count = r.u16();
      m.items.reserve(count);
      for (std::uint16_t i = 0; i < count; ++i) {
        QueryItem it;
        it.corr_id = r.u32();
        it.key = read_key(r);
        m.items.push_back(std::move(it));
      }
      msg = std::move(m);
      break;
    }
    case MsgType::query_resp: {
      QueryResp m;
      const std::uint16_t count = r.u16();
      m.items.reserve(count);
      for (std::uint16_t i = 0; i < count; ++i) {
        QueryRespItem it;
        it.corr_id = r.u32();
        const std::uint8_t hit = r.u8();
        if (hit > 1) throw std::runtime_error("hit flag must be 0 or 1");
        it.hit = hit == 1;
        it.cs = r.f32();
        it.value = read_value(r);
        if (!it.hit && !it.value.empty())
          throw std::runtime_error("miss response carries a value");
        m.items.push_back(std::move(it));
      }
      msg = std::move(m);
      break;
    }
    case MsgType::insert_batch: {
      InsertBatch m;
      const std::uint16_t count = r.u16();
      m.entries.reserve(count);
      for (std::uint16_t i = 0; i < count; ++i) {
        InsertEntry e;
        e.key = read_key(r);
        e.value = read_value(r);
        m.entries.push_back(std::move(e));
      }
      msg = std::move(m);
      break;
    }
    case MsgType::insert_ack: {
      InsertAck m;
      m.count = r.u16();
      msg = m;
      break;
    }
    case MsgType::error: {
      ErrorMsg m;
      m.code = r.u16();
      m.message.assign(reinterpret_cast<const char*>(payload.data()) + r.offset(),
                       r.remaining());
      r.skip(r.remaining());
      msg = std::move(m);
      break;
    }
    case MsgType::ping: {
      msg = Ping{};
      break;
    }
    case MsgType::pong: {
      Pong m;
      m.key_count = r.u64();
      msg = m;
      break;
    }
    default:
      throw std::runtime_error("unknown message type");
  }
  if (!r.done()) throw std::runtime_error("trailing bytes in payload");
  return msg;
}

}  // namespace

MsgType type_of(const Message& msg) {
  return static_cast<MsgType>(msg.index() + 1);
}

std::vector<std::uint8_t> encode(const Message& msg) {
  ByteWriter payload;
  std::visit([&payload](const auto& m) { encode_payload(m, payload); }, msg);
  if (payload.size() > kMaxPayload) throw std::length_error("payload exceeds frame limit");

  ByteWriter frame;
  frame.raw(kMagic, 4);
  frame.u8(static_cast<std::uint8_t>(type_of(msg)));
  frame.u32(static_cast<std::uint32_t>(payload.size()));
  frame.raw(payload.bytes().data(), payload.size());
  return frame.take();
}

DecodeResult decode(std::span<const std::uint8_t> buf) {
  DecodeResult res;
  if (buf.size() < kHeaderSize) {
    res.status = DecodeResult::Status::need_more;
    return res;
  }
  if (std::memcmp(buf.data(), kMagic, 4) != 0) {
    res.status = DecodeResult::Status::malformed;
    res.header_ok = false;
    res.error = "bad magic";
    return res;
  }
  const std::uint8_t type_raw = buf[4];
  std::uint32_t payload_len = 0;
  for (int i = 0; i < 4; ++i)
    payload_len |= static_cast<std::uint32_t>(buf[5 + static_cast<std::size_t>(i)]) << (8 * i);

  if (payload_len > kMaxPayload) {
    res.status = DecodeResult::Status::malformed;
    res.header_ok = false;  // cannot trust the length, resync impossible
    res.error = "payload length exceeds limit";
    return res;
  }
  if (buf.size() < kHeaderSize + payload_len) {
    res.status = DecodeResult::Status::need_more;
    return res;
  }

  res.consumed = kHeaderSize + payload_len;
  res.header_ok = true;
  if (type_raw < 1 || type_raw > 7) {
    res.status = DecodeResult::Status::malformed;
    res.error = "unknown message type " + std::to_string(type_raw);
    return res;
  }
  try {
    res.msg = decode_payload(static_cast<MsgType>(type_raw),
                             buf.subspan(kHeaderSize, payload_len));
    res.status = DecodeResult::Status::ok;
  } catch (const std::exception& e) {
    res.status = DecodeResult::Status::malformed;
    res.error = e.what();
  }
  return res;
}

}  // namespace mlr::proto
