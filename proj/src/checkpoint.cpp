#include "cyclecl/checkpoint.hpp"

#include "cyclecl/binary_io.hpp"

namespace cyclecl {

namespace {

void write_encoder(io::Writer& w, const Encoder<float>& enc) {
  enc.for_each([&](const MatrixF& m) { w.f32s(m.data(), static_cast<std::size_t>(m.size())); });
}

void read_encoder(io::Reader& r, Encoder<float>& enc) {
  enc.for_each([&](MatrixF& m) { r.f32s(m.data(), static_cast<std::size_t>(m.size()), "parameters"); });
}

std::uint32_t checked_u32(io::Reader& r, const char* what, std::uint32_t limit) {
  const auto at = r.offset();
  const auto v = r.u32(what);
  if (v > limit) {
    throw FormatError(std::string(what) + " value " + std::to_string(v) + " is implausible", at);
  }
  return v;
}

}  // namespace

std::vector<unsigned char> serialize_checkpoint(const Checkpoint& ckpt) {
  io::Writer w;
  w.bytes("CCKP", 4);
  w.u32(kCheckpointVersion);
  const auto& c = ckpt.config;
  w.u32(static_cast<std::uint32_t>(c.input_height));
  w.u32(static_cast<std::uint32_t>(c.input_width));
  w.u32(static_cast<std::uint32_t>(c.hidden_widths.size()));
  for (int hw : c.hidden_widths) w.u32(static_cast<std::uint32_t>(hw));
  w.u32(static_cast<std::uint32_t>(c.embedding_dim));
  w.u32(static_cast<std::uint32_t>(c.projection_dim));
  write_encoder(w, ckpt.nets.query);
  write_encoder(w, ckpt.nets.key);
  w.u32(static_cast<std::uint32_t>(ckpt.queues.size()));
  for (const auto& q : ckpt.queues) {
    w.u32(static_cast<std::uint32_t>(q.capacity()));
    w.u32(static_cast<std::uint32_t>(q.dim()));
    w.u32(static_cast<std::uint32_t>(q.write_ptr()));
    w.u32(static_cast<std::uint32_t>(q.fill()));
    w.f32s(q.buffer().data(), static_cast<std::size_t>(q.buffer().size()));
    for (auto v : q.video_ids()) w.i64(v);
  }
  w.u64(ckpt.step);
  return w.buffer();
}

Checkpoint deserialize_checkpoint(const std::vector<unsigned char>& bytes) {
  io::Reader r(bytes.data(), bytes.size());
  if (r.tag(4, "magic") != "CCKP") throw FormatError("bad magic, expected CCKP", 0);
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) {
    throw FormatError("unsupported CCKP version " + std::to_string(version), 4);
  }
  constexpr std::uint32_t kMaxDim = 1u << 20;
  Checkpoint ckpt;
  auto& c = ckpt.config;
  c.input_height = static_cast<int>(checked_u32(r, "input_height", kMaxDim));
  c.input_width = static_cast<int>(checked_u32(r, "input_width", kMaxDim));
  const auto hidden = checked_u32(r, "num_hidden", 64);
  c.hidden_widths.clear();
  for (std::uint32_t i = 0; i < hidden; ++i) {
    c.hidden_widths.push_back(static_cast<int>(checked_u32(r, "hidden_width", kMaxDim)));
  }
  c.embedding_dim = static_cast<int>(checked_u32(r, "embedding_dim", kMaxDim));
  c.projection_dim = static_cast<int>(checked_u32(r, "projection_dim", kMaxDim));
  try {
    c.validate();
  } catch (const ConfigError& e) {
    throw FormatError(std::string("invalid encoder config: ") + e.what(), r.offset());
  }
  ckpt.nets = init_params<float>(c, 0);
  read_encoder(r, ckpt.nets.query);
  read_encoder(r, ckpt.nets.key);
  const auto nq = checked_u32(r, "num_queues", 16);
  for (std::uint32_t i = 0; i < nq; ++i) {
    const int cap = static_cast<int>(checked_u32(r, "queue capacity", 1u << 24));
    const int dim = static_cast<int>(checked_u32(r, "queue dim", kMaxDim));
    const int wp = static_cast<int>(r.u32("queue write_ptr"));
    const int fill = static_cast<int>(r.u32("queue fill"));
    const auto at = r.offset();
    r.need(static_cast<std::size_t>(cap) * static_cast<std::size_t>(dim) * 4, "queue buffer");
    MatrixF buf(cap, dim);
    r.f32s(buf.data(), static_cast<std::size_t>(buf.size()), "queue buffer");
    std::vector<VideoId> vids(static_cast<std::size_t>(cap));
    for (auto& v : vids) v = r.i64("queue video ids");
    try {
      ckpt.queues.push_back(MemoryQueue::from_state(cap, dim, wp, fill, std::move(buf), std::move(vids)));
    } catch (const ParameterError& e) {
      throw FormatError(e.what(), at);
    }
  }
  ckpt.step = r.u64("step");
  if (r.remaining() != 0) {
    throw FormatError("trailing bytes after checkpoint: " + std::to_string(r.remaining()),
                      r.offset());
  }
  return ckpt;
}

void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
  io::write_file(path.string(), serialize_checkpoint(ckpt));
}

Checkpoint read_checkpoint(const std::filesystem::path& path) {
  return deserialize_checkpoint(io::read_file(path.string()));
}

}  // namespace cyclecl
