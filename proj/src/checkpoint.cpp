#include "deepbv/checkpoint.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>

namespace deepbv {

namespace {

constexpr std::uint16_t kVersion = 1;

struct Writer {
  std::vector<std::uint8_t> out;
  void u8(std::uint8_t v) { out.push_back(v); }
  void u16(std::uint16_t v) {
    for (int i = 0; i < 2; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(std::uint8_t(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(std::uint32_t(v)); }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
};

struct Reader {
  const std::vector<std::uint8_t>& in;
  std::size_t pos = 0;
  void need(std::size_t n) const {
    if (in.size() - pos < n) throw FormatError(FormatErrorKind::Truncated, "checkpoint ends at byte " + std::to_string(in.size()));
  }
  std::uint8_t u8() {
    need(1);
    return in[pos++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v = std::uint16_t(in[pos] | (in[pos + 1] << 8));
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t(in[pos + std::size_t(i)]) << (8 * i);
    pos += 4;
    return v;
  }
  std::int32_t i32() { return std::int32_t(u32()); }
  float f32() { return std::bit_cast<float>(u32()); }
};

std::vector<Vector<float>*> payload(Net& net) {
  std::vector<Vector<float>*> out;
  for (std::size_t i = 0; i < net.size(); ++i) {
    Layer<float>* l = net.layer(int(i));
    if (!l) continue;
    for (auto& p : l->params()) out.push_back(p.value);
    for (auto* b : l->buffers()) out.push_back(b);
  }
  return out;
}

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(const Net& net) {
  const NetSpec& spec = net.spec();
  Writer table;
  table.u32(std::uint32_t(spec.layers.size()));
  table.i32(spec.input_channels);
  table.i32(spec.input_side);
  table.i32(spec.output);
  table.i32(spec.fusion_head);
  for (const LayerDesc& d : spec.layers) {
    std::vector<std::int32_t> ints{d.in_channels,
                                   d.out_channels,
                                   d.kernel,
                                   d.stride,
                                   d.padding == Padding::Same ? 0 : 1,
                                   d.bias ? 1 : 0,
                                   std::int32_t(std::lround(d.dropout * 1e6)),
                                   std::int32_t(d.inputs.size())};
    ints.insert(ints.end(), d.inputs.begin(), d.inputs.end());
    table.u8(std::uint8_t(d.kind));
    table.u8(std::uint8_t(d.stream));
    table.u16(std::uint16_t(ints.size()));
    for (std::int32_t v : ints) table.i32(v);
  }

  Writer w;
  for (char c : std::string("DBVW")) w.u8(std::uint8_t(c));
  w.u16(kVersion);
  w.u32(std::uint32_t(table.out.size()));
  w.out.insert(w.out.end(), table.out.begin(), table.out.end());
  // Serialization only reads the tensors; the accessors are non-const
  // because training uses the same views to write.
  for (const Vector<float>* v : payload(const_cast<Net&>(net)))
    for (Eigen::Index i = 0; i < v->size(); ++i) w.f32((*v)[i]);
  return std::move(w.out);
}

Net decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  Reader r{bytes};
  r.need(4);
  if (std::memcmp(bytes.data(), "DBVW", 4) != 0) throw FormatError(FormatErrorKind::BadMagic, "not a DBVW checkpoint");
  r.pos = 4;
  const std::uint16_t version = r.u16();
  if (version != kVersion) {
    throw FormatError(FormatErrorKind::UnsupportedVersion, "checkpoint version " + std::to_string(version));
  }
  const std::uint32_t table_len = r.u32();
  r.need(table_len);
  const std::size_t table_end = r.pos + table_len;

  NetSpec spec;
  const std::uint32_t count = r.u32();
  spec.input_channels = r.i32();
  spec.input_side = r.i32();
  spec.output = r.i32();
  spec.fusion_head = r.i32();
  if (count > table_len) throw FormatError(FormatErrorKind::Malformed, "layer count exceeds table size");
  for (std::uint32_t i = 0; i < count; ++i) {
    LayerDesc d;
    const std::uint8_t kind = r.u8();
    if (kind > std::uint8_t(LayerKind::Concat)) throw FormatError(FormatErrorKind::Malformed, "unknown layer kind " + std::to_string(kind));
    d.kind = LayerKind(kind);
    const std::uint8_t stream = r.u8();
    if (stream > std::uint8_t(Stream::Classifier)) throw FormatError(FormatErrorKind::Malformed, "unknown stream tag");
    d.stream = Stream(stream);
    const std::uint16_t n = r.u16();
    if (n < 8) throw FormatError(FormatErrorKind::Malformed, "layer record too short");
    d.in_channels = r.i32();
    d.out_channels = r.i32();
    d.kernel = r.i32();
    d.stride = r.i32();
    d.padding = r.i32() == 0 ? Padding::Same : Padding::Valid;
    d.bias = r.i32() != 0;
    d.dropout = r.i32() / 1e6;
    const std::int32_t n_inputs = r.i32();
    if (n_inputs < 0 || n != 8 + n_inputs) throw FormatError(FormatErrorKind::Malformed, "layer input list size mismatch");
    for (std::int32_t k = 0; k < n_inputs; ++k) d.inputs.push_back(r.i32());
    spec.layers.push_back(std::move(d));
  }
  if (r.pos > table_end) throw FormatError(FormatErrorKind::Truncated, "layer table overruns its declared length");
  if (r.pos != table_end) throw FormatError(FormatErrorKind::Malformed, "layer table length mismatch");

  Net net;
  try {
    net = Net(std::move(spec));
  } catch (const ShapeError& e) {
    throw FormatError(FormatErrorKind::Malformed, std::string("invalid layer table: ") + e.what());
  }
  for (Vector<float>* v : payload(net))
    for (Eigen::Index i = 0; i < v->size(); ++i) (*v)[i] = r.f32();
  if (r.pos != bytes.size()) throw FormatError(FormatErrorKind::Malformed, "trailing bytes after parameter payload");
  return net;
}

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError(FormatErrorKind::Io, "cannot open " + path);
  return {std::istreambuf_iterator<char>(f), std::istreambuf_iterator<char>()};
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw FormatError(FormatErrorKind::Io, "cannot create " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!f) throw FormatError(FormatErrorKind::Io, "write failed for " + path);
}

void save_checkpoint(const Net& net, const std::string& path) { write_file(path, encode_checkpoint(net)); }

Net load_checkpoint(const std::string& path) { return decode_checkpoint(read_file(path)); }

}  // namespace deepbv
