/* Copyright 2026 The FuseMOD Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 *
 */

#include "fusemod/checkpoint.hpp"

#include <bit>
#include <fstream>

#include "fusemod/error.hpp"

namespace fusemod::nn {

namespace {

constexpr char kMagic[4] = {'F', 'M', 'C', 'K'};

class Writer {
 public:
  void u32(std::uint32_t v)
  {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i32(std::int32_t v) { u32(static_cast<std::uint32_t>(v)); }
  void f64(double v)
  {
    const auto bits = std::bit_cast<std::uint64_t>(v);
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
  }
  void str(const std::string& s)
  {
    u32(static_cast<std::uint32_t>(s.size()));
    out.insert(out.end(), s.begin(), s.end());
  }
  std::vector<std::uint8_t> out;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : bytes(b) {}

  void need(std::size_t n)
  {
    if (pos + n > bytes.size()) {
      throw Error(ErrorCode::TruncatedRecord, "checkpoint offset " + std::to_string(pos),
                  static_cast<std::int64_t>(pos));
    }
  }
  std::uint32_t u32()
  {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes[pos + i]) << (8 * i);
    pos += 4;
    return v;
  }
  std::int32_t i32() { return static_cast<std::int32_t>(u32()); }
  double f64()
  {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes[pos + i]) << (8 * i);
    pos += 8;
    return std::bit_cast<double>(v);
  }
  std::string str()
  {
    const auto n = u32();
    need(n);
    std::string s(reinterpret_cast<const char*>(bytes.data() + pos), n);
    pos += n;
    return s;
  }

  std::span<const std::uint8_t> bytes;
  std::size_t pos = 0;
};

}  // namespace

std::vector<std::uint8_t> Checkpoint::serialize() const
{
  Writer w;
  w.out.insert(w.out.end(), std::begin(kMagic), std::end(kMagic));
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.str(v);
  }
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, t] : tensors) {
    w.str(name);
    const Shape& s = t.shape();
    w.i32(s.n);
    w.i32(s.c);
    w.i32(s.h);
    w.i32(s.w);
    for (double v : t.data()) w.f64(v);
  }
  w.u32(static_cast<std::uint32_t>(scalars.size()));
  for (const auto& [name, v] : scalars) {
    w.str(name);
    w.f64(v);
  }
  return std::move(w.out);
}

Checkpoint Checkpoint::parse(std::span<const std::uint8_t> bytes)
{
  if (bytes.size() < 8 || !std::equal(std::begin(kMagic), std::end(kMagic), bytes.begin())) {
    throw Error(ErrorCode::BadMagic, "checkpoint");
  }
  Reader r(bytes);
  r.pos = 4;
  const auto version = r.u32();
  if (version != kVersion) {
    throw Error(ErrorCode::BadMagic, "checkpoint version " + std::to_string(version));
  }
  Checkpoint ck;
  for (auto n = r.u32(); n > 0; --n) {
    auto k = r.str();
    auto v = r.str();
    ck.meta.emplace_back(std::move(k), std::move(v));
  }
  for (auto n = r.u32(); n > 0; --n) {
    auto name = r.str();
    Shape s;
    s.n = r.i32();
    s.c = r.i32();
    s.h = r.i32();
    s.w = r.i32();
    if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0) throw Error(ErrorCode::DimensionMismatch, name);
    r.need(s.numel() * 8);
    std::vector<double> data(s.numel());
    for (auto& v : data) v = r.f64();
    ck.tensors.emplace_back(std::move(name), Tensor(s, std::move(data)));
  }
  for (auto n = r.u32(); n > 0; --n) {
    auto name = r.str();
    const double v = r.f64();
    ck.scalars.emplace_back(std::move(name), v);
  }
  if (r.pos != bytes.size()) throw Error(ErrorCode::DimensionMismatch, "trailing bytes in checkpoint");
  return ck;
}

void Checkpoint::save(const std::filesystem::path& path) const
{
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const auto bytes = serialize();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorCode::IoFailure, "cannot write " + path.string());
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

Checkpoint Checkpoint::load(const std::filesystem::path& path)
{
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::IoFailure, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse(bytes);
}

const Tensor* Checkpoint::find_tensor(std::string_view name) const
{
  for (const auto& [k, t] : tensors)
    if (k == name) return &t;
  return nullptr;
}

const double* Checkpoint::find_scalar(std::string_view name) const
{
  for (const auto& [k, v] : scalars)
    if (k == name) return &v;
  return nullptr;
}

const std::string* Checkpoint::find_meta(std::string_view key) const
{
  for (const auto& [k, v] : meta)
    if (k == key) return &v;
  return nullptr;
}

}  // namespace fusemod::nn
