// Copyright 2026 The localfeat Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <string_view>

#include "localfeat/training.hpp"

// Checkpoint container, all integers and reals little-endian:
//
//   "LFCK"                    magic
//   u32                       format version (1)
//   u32 + bytes               config fingerprint
//   u32                       number of arrays
//   per array:
//     u32 + bytes             name
//     u32                     rank, then u64 per dimension
//     f32 * prod(dims)        values
//   i64                       epoch (-1 for averaged checkpoints)
//   f64, f64                  validation OA, validation mAcc

namespace localfeat {

class CheckpointFormatError : public Error {
public:
    using Error::Error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename U>
void put_le(std::string& out, U v) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffU));
}

class Reader {
public:
    explicit Reader(std::string_view bytes) : bytes_(bytes) {}

    template <typename U>
    U get() {
        need(sizeof(U));
        U v = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i)
            v |= static_cast<U>(static_cast<unsigned char>(bytes_[pos_ + i])) << (8 * i);
        pos_ += sizeof(U);
        return v;
    }
    std::string get_string() {
        const auto n = get<std::uint32_t>();
        need(n);
        std::string s(bytes_.substr(pos_, n));
        pos_ += n;
        return s;
    }
    [[nodiscard]] bool done() const noexcept { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw CheckpointFormatError("checkpoint truncated");
    }
    std::string_view bytes_;
    std::size_t pos_ = 0;
};

inline void put_string(std::string& out, std::string_view s) {
    put_le(out, static_cast<std::uint32_t>(s.size()));
    out.append(s);
}

}  // namespace detail

/// Serializes a checkpoint. Parameters are narrowed to 32-bit reals.
[[nodiscard]] inline std::string encode_checkpoint(const Checkpoint& c) {
    std::string out = "LFCK";
    detail::put_le(out, kCheckpointVersion);
    detail::put_string(out, c.fingerprint);
    detail::put_le(out, static_cast<std::uint32_t>(c.params.blocks.size()));
    for (const ParameterBlock& b : c.params.blocks) {
        detail::put_string(out, b.name);
        detail::put_le(out, static_cast<std::uint32_t>(b.shape.size()));
        for (std::size_t d : b.shape) detail::put_le(out, static_cast<std::uint64_t>(d));
        for (std::size_t i = 0; i < b.size; ++i)
            detail::put_le(out, std::bit_cast<std::uint32_t>(static_cast<float>(c.params.values[b.offset + i])));
    }
    detail::put_le(out, std::bit_cast<std::uint64_t>(c.epoch));
    detail::put_le(out, std::bit_cast<std::uint64_t>(c.metrics.overall_accuracy));
    detail::put_le(out, std::bit_cast<std::uint64_t>(c.metrics.mean_class_accuracy));
    return out;
}

[[nodiscard]] inline Checkpoint decode_checkpoint(std::string_view bytes) {
    if (bytes.size() < 4 || bytes.substr(0, 4) != "LFCK") throw CheckpointFormatError("not a checkpoint (bad magic)");
    detail::Reader in(bytes.substr(4));
    const auto version = in.get<std::uint32_t>();
    if (version != kCheckpointVersion)
        throw CheckpointFormatError("unsupported checkpoint version " + std::to_string(version));
    Checkpoint c;
    c.fingerprint = in.get_string();
    const auto arrays = in.get<std::uint32_t>();
    for (std::uint32_t a = 0; a < arrays; ++a) {
        ParameterBlock b;
        b.name = in.get_string();
        const auto rank = in.get<std::uint32_t>();
        std::size_t count = 1;
        for (std::uint32_t r = 0; r < rank; ++r) {
            b.shape.push_back(static_cast<std::size_t>(in.get<std::uint64_t>()));
            count *= b.shape.back();
        }
        b.offset = c.params.values.size();
        b.size = count;
        for (std::size_t i = 0; i < count; ++i)
            c.params.values.push_back(static_cast<double>(std::bit_cast<float>(in.get<std::uint32_t>())));
        c.params.blocks.push_back(std::move(b));
    }
    c.epoch = std::bit_cast<std::int64_t>(in.get<std::uint64_t>());
    c.metrics.overall_accuracy = std::bit_cast<double>(in.get<std::uint64_t>());
    c.metrics.mean_class_accuracy = std::bit_cast<double>(in.get<std::uint64_t>());
    if (!in.done()) throw CheckpointFormatError("trailing bytes after checkpoint");
    return c;
}

inline void save_checkpoint(const Checkpoint& c, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw Error("cannot write " + path.string());
    const std::string bytes = encode_checkpoint(c);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error("failed writing " + path.string());
}

[[nodiscard]] inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    const std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    return decode_checkpoint(bytes);
}

}  // namespace localfeat
