#include "handtex/npz.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <numeric>
#include <regex>
#include <sstream>
#include <stdexcept>

namespace handtex::npz {

namespace {

template <typename T>
void put_le(std::string& out, T v) {
  for (std::size_t i = 0; i < sizeof(T); ++i) out.push_back(static_cast<char>((static_cast<uint64_t>(v) >> (8 * i)) & 0xff));
}

template <typename T>
T get_le(const std::string& in, std::size_t pos) {
  if (pos + sizeof(T) > in.size()) throw std::runtime_error("npz: truncated archive");
  uint64_t v = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(in[pos + i])) << (8 * i);
  return static_cast<T>(v);
}

const char* descr_of(DType t) {
  switch (t) {
    case DType::kFloat64: return "<f8";
    case DType::kInt64: return "<i8";
    case DType::kUInt8: return "|u1";
  }
  return "<f8";
}

std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

std::string inflate_raw(const std::string& src, std::size_t expected) {
  std::string out(expected, '\0');
  z_stream zs{};
  if (inflateInit2(&zs, -MAX_WBITS) != Z_OK) throw std::runtime_error("npz: inflateInit failed");
  zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(src.data()));
  zs.avail_in = static_cast<uInt>(src.size());
  zs.next_out = reinterpret_cast<Bytef*>(out.data());
  zs.avail_out = static_cast<uInt>(out.size());
  const int rc = inflate(&zs, Z_FINISH);
  inflateEnd(&zs);
  if (rc != Z_STREAM_END) throw std::runtime_error("npz: corrupt deflate stream");
  return out;
}

}  // namespace

std::size_t Array::numel() const {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         [](std::size_t a, int64_t b) { return a * static_cast<std::size_t>(b); });
}

Array Array::from_tensor(const Tensor& t) {
  std::vector<int64_t> shape(t.shape().begin(), t.shape().end());
  return from_doubles({t.storage().begin(), t.storage().end()}, std::move(shape));
}

Array Array::from_doubles(std::vector<double> values, std::vector<int64_t> shape) {
  Array a;
  a.dtype = DType::kFloat64;
  a.shape = std::move(shape);
  a.f64 = std::move(values);
  if (a.f64.size() != a.numel()) throw std::invalid_argument("npz: value count does not match shape");
  return a;
}

Array Array::from_ints(std::vector<int64_t> values, std::vector<int64_t> shape) {
  Array a;
  a.dtype = DType::kInt64;
  a.shape = std::move(shape);
  a.i64 = std::move(values);
  if (a.i64.size() != a.numel()) throw std::invalid_argument("npz: value count does not match shape");
  return a;
}

Array Array::from_bytes(std::vector<uint8_t> values, std::vector<int64_t> shape) {
  Array a;
  a.dtype = DType::kUInt8;
  a.shape = std::move(shape);
  a.u8 = std::move(values);
  if (a.u8.size() != a.numel()) throw std::invalid_argument("npz: value count does not match shape");
  return a;
}

Tensor Array::to_tensor() const {
  std::vector<int> s(shape.begin(), shape.end());
  return Tensor(std::move(s), as_doubles());
}

std::vector<double> Array::as_doubles() const {
  switch (dtype) {
    case DType::kFloat64: return f64;
    case DType::kInt64: return {i64.begin(), i64.end()};
    case DType::kUInt8: return {u8.begin(), u8.end()};
  }
  return {};
}

std::vector<int64_t> Array::as_ints() const {
  switch (dtype) {
    case DType::kInt64: return i64;
    case DType::kUInt8: return {u8.begin(), u8.end()};
    case DType::kFloat64: {
      std::vector<int64_t> out(f64.size());
      for (std::size_t i = 0; i < f64.size(); ++i) out[i] = static_cast<int64_t>(f64[i]);
      return out;
    }
  }
  return {};
}

std::string encode_npy(const Array& array) {
  std::ostringstream dict;
  dict << "{'descr': '" << descr_of(array.dtype) << "', 'fortran_order': False, 'shape': (";
  for (std::size_t i = 0; i < array.shape.size(); ++i) dict << array.shape[i] << ", ";
  std::string header = dict.str();
  if (array.shape.size() > 1) header.resize(header.size() - 1);  // "(2, 3)" not "(2, 3, )"
  if (array.shape.size() > 1) header.back() = ')';
  else header += ")";
  header += ", }";
  // Pad so that the payload starts on a 64-byte boundary.
  const std::size_t preamble = 10;
  std::size_t total = preamble + header.size() + 1;
  header.append((64 - total % 64) % 64, ' ');
  header.push_back('\n');

  std::string out("\x93NUMPY\x01\x00", 8);
  put_le<uint16_t>(out, static_cast<uint16_t>(header.size()));
  out += header;
  switch (array.dtype) {
    case DType::kFloat64:
      for (double v : array.f64) {
        uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        put_le<uint64_t>(out, bits);
      }
      break;
    case DType::kInt64:
      for (int64_t v : array.i64) put_le<uint64_t>(out, static_cast<uint64_t>(v));
      break;
    case DType::kUInt8:
      out.append(reinterpret_cast<const char*>(array.u8.data()), array.u8.size());
      break;
  }
  return out;
}

Array decode_npy(const std::string& bytes) {
  if (bytes.size() < 10 || bytes.compare(0, 6, "\x93NUMPY") != 0) throw std::runtime_error("npy: bad magic");
  const int major = static_cast<uint8_t>(bytes[6]);
  std::size_t header_len, pos;
  if (major == 1) {
    header_len = get_le<uint16_t>(bytes, 8);
    pos = 10;
  } else {
    header_len = get_le<uint32_t>(bytes, 8);
    pos = 12;
  }
  const std::string header = bytes.substr(pos, header_len);
  pos += header_len;

  std::smatch m;
  if (!std::regex_search(header, m, std::regex("'descr'\\s*:\\s*'([^']+)'"))) throw std::runtime_error("npy: no descr");
  const std::string descr = m[1];
  if (std::regex_search(header, m, std::regex("'fortran_order'\\s*:\\s*True"))) {
    throw std::runtime_error("npy: fortran_order arrays are not supported");
  }
  if (!std::regex_search(header, m, std::regex("'shape'\\s*:\\s*\\(([^)]*)\\)"))) throw std::runtime_error("npy: no shape");
  Array a;
  {
    std::string dims = m[1];
    std::regex num("\\d+");
    for (auto it = std::sregex_iterator(dims.begin(), dims.end(), num); it != std::sregex_iterator(); ++it) {
      a.shape.push_back(std::stoll(it->str()));
    }
  }
  const std::size_t n = a.numel();
  auto need = [&](std::size_t width) {
    if (pos + n * width > bytes.size()) throw std::runtime_error("npy: truncated payload");
  };
  if (descr == "<f8") {
    need(8);
    a.dtype = DType::kFloat64;
    a.f64.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      uint64_t bits = get_le<uint64_t>(bytes, pos + 8 * i);
      std::memcpy(&a.f64[i], &bits, sizeof bits);
    }
  } else if (descr == "<f4") {
    need(4);
    a.dtype = DType::kFloat64;
    a.f64.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      uint32_t bits = get_le<uint32_t>(bytes, pos + 4 * i);
      float f;
      std::memcpy(&f, &bits, sizeof f);
      a.f64[i] = f;
    }
  } else if (descr == "<i8") {
    need(8);
    a.dtype = DType::kInt64;
    a.i64.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.i64[i] = static_cast<int64_t>(get_le<uint64_t>(bytes, pos + 8 * i));
  } else if (descr == "<i4") {
    need(4);
    a.dtype = DType::kInt64;
    a.i64.resize(n);
    for (std::size_t i = 0; i < n; ++i) a.i64[i] = static_cast<int32_t>(get_le<uint32_t>(bytes, pos + 4 * i));
  } else if (descr == "|u1" || descr == "|b1") {
    need(1);
    a.dtype = DType::kUInt8;
    a.u8.assign(bytes.begin() + static_cast<std::ptrdiff_t>(pos), bytes.begin() + static_cast<std::ptrdiff_t>(pos + n));
  } else {
    throw std::runtime_error("npy: unsupported dtype " + descr);
  }
  return a;
}

void save(const std::filesystem::path& path, const Archive& archive) {
  std::string out;
  std::string central;
  uint16_t count = 0;
  for (const auto& [name, array] : archive) {
    const std::string entry = name + ".npy";
    const std::string payload = encode_npy(array);
    if (payload.size() > 0xffffffffULL) throw std::runtime_error("npz: array too large: " + name);
    const uint32_t crc = static_cast<uint32_t>(
        crc32(0L, reinterpret_cast<const Bytef*>(payload.data()), static_cast<uInt>(payload.size())));
    const uint32_t offset = static_cast<uint32_t>(out.size());
    const uint32_t size = static_cast<uint32_t>(payload.size());

    put_le<uint32_t>(out, 0x04034b50);
    put_le<uint16_t>(out, 20);  // version needed
    put_le<uint16_t>(out, 0);   // flags
    put_le<uint16_t>(out, 0);   // stored
    put_le<uint16_t>(out, 0);   // mod time
    put_le<uint16_t>(out, 0x21);  // mod date (1980-01-01)
    put_le<uint32_t>(out, crc);
    put_le<uint32_t>(out, size);
    put_le<uint32_t>(out, size);
    put_le<uint16_t>(out, static_cast<uint16_t>(entry.size()));
    put_le<uint16_t>(out, 0);
    out += entry;
    out += payload;

    put_le<uint32_t>(central, 0x02014b50);
    put_le<uint16_t>(central, 20);
    put_le<uint16_t>(central, 20);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0x21);
    put_le<uint32_t>(central, crc);
    put_le<uint32_t>(central, size);
    put_le<uint32_t>(central, size);
    put_le<uint16_t>(central, static_cast<uint16_t>(entry.size()));
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0);
    put_le<uint16_t>(central, 0);
    put_le<uint32_t>(central, 0);
    put_le<uint32_t>(central, offset);
    central += entry;
    ++count;
  }
  const uint32_t cd_offset = static_cast<uint32_t>(out.size());
  out += central;
  put_le<uint32_t>(out, 0x06054b50);
  put_le<uint16_t>(out, 0);
  put_le<uint16_t>(out, 0);
  put_le<uint16_t>(out, count);
  put_le<uint16_t>(out, count);
  put_le<uint32_t>(out, static_cast<uint32_t>(central.size()));
  put_le<uint32_t>(out, cd_offset);
  put_le<uint16_t>(out, 0);

  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("write failed: " + path.string());
}

Archive load(const std::filesystem::path& path) {
  const std::string data = read_file(path);
  // Locate the end-of-central-directory record.
  if (data.size() < 22) throw std::runtime_error("npz: not a zip archive: " + path.string());
  std::size_t eocd = std::string::npos;
  for (std::size_t i = data.size() - 22 + 1; i-- > 0;) {
    if (get_le<uint32_t>(data, i) == 0x06054b50) {
      eocd = i;
      break;
    }
    if (data.size() - i > 22 + 0xffff) break;
  }
  if (eocd == std::string::npos) throw std::runtime_error("npz: missing central directory: " + path.string());
  const uint16_t count = get_le<uint16_t>(data, eocd + 10);
  std::size_t pos = get_le<uint32_t>(data, eocd + 16);

  Archive archive;
  for (uint16_t e = 0; e < count; ++e) {
    if (get_le<uint32_t>(data, pos) != 0x02014b50) throw std::runtime_error("npz: bad central directory");
    const uint16_t method = get_le<uint16_t>(data, pos + 10);
    const uint32_t csize = get_le<uint32_t>(data, pos + 20);
    const uint32_t usize = get_le<uint32_t>(data, pos + 24);
    const uint16_t name_len = get_le<uint16_t>(data, pos + 28);
    const uint16_t extra_len = get_le<uint16_t>(data, pos + 30);
    const uint16_t comment_len = get_le<uint16_t>(data, pos + 32);
    const uint32_t local = get_le<uint32_t>(data, pos + 42);
    std::string name = data.substr(pos + 46, name_len);
    pos += 46 + name_len + extra_len + comment_len;

    const uint16_t lname = get_le<uint16_t>(data, local + 26);
    const uint16_t lextra = get_le<uint16_t>(data, local + 28);
    const std::size_t start = local + 30 + lname + lextra;
    if (start + csize > data.size()) throw std::runtime_error("npz: truncated entry " + name);
    std::string payload = data.substr(start, csize);
    if (method == 8) payload = inflate_raw(payload, usize);
    else if (method != 0) throw std::runtime_error("npz: unsupported compression in " + name);

    if (name.size() > 4 && name.compare(name.size() - 4, 4, ".npy") == 0) name.resize(name.size() - 4);
    archive.emplace(std::move(name), decode_npy(payload));
  }
  return archive;
}

const Array& get(const Archive& archive, const std::string& name) {
  auto it = archive.find(name);
  if (it == archive.end()) throw std::runtime_error("container is missing array '" + name + "'");
  return it->second;
}

}  // namespace handtex::npz
