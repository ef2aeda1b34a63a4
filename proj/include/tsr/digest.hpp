/**
 * @file digest.hpp
 * @brief SHA-256 hashing and base64 encoding helpers.
 */

#pragma once

#include <openssl/evp.h>

#include <cstdint>
#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include "tsr/error.hpp"

namespace tsr {

/// Streaming SHA-256. Field framing is the caller's job; see update_framed().
class Sha256 {
public:
    Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
        if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
            raise(ErrorCode::Internal, "sha256 init failed");
    }

    void update(const void* data, size_t len) {
        if (EVP_DigestUpdate(ctx_.get(), data, len) != 1)
            raise(ErrorCode::Internal, "sha256 update failed");
    }

    void update(std::string_view s) { update(s.data(), s.size()); }
    void update(const std::vector<uint8_t>& v) { update(v.data(), v.size()); }

    /// Length-prefixed field: unambiguous concatenation of variable-size parts.
    void update_framed(std::string_view field, const void* data, size_t len) {
        update(field);
        update("\x1f", 1);
        std::string n = std::to_string(len);
        update(n);
        update("\x1f", 1);
        update(data, len);
    }

    void update_framed(std::string_view field, std::string_view value) {
        update_framed(field, value.data(), value.size());
    }

    std::string hex() {
        unsigned char out[EVP_MAX_MD_SIZE];
        unsigned int out_len = 0;
        if (EVP_DigestFinal_ex(ctx_.get(), out, &out_len) != 1)
            raise(ErrorCode::Internal, "sha256 final failed");
        static const char* digits = "0123456789abcdef";
        std::string hex;
        hex.reserve(out_len * 2);
        for (unsigned int i = 0; i < out_len; ++i) {
            hex.push_back(digits[out[i] >> 4]);
            hex.push_back(digits[out[i] & 0xf]);
        }
        return hex;
    }

private:
    std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(const void* data, size_t len) {
    Sha256 h;
    h.update(data, len);
    return h.hex();
}

inline std::string sha256_hex(std::string_view s) { return sha256_hex(s.data(), s.size()); }
inline std::string sha256_hex(const std::vector<uint8_t>& v) { return sha256_hex(v.data(), v.size()); }

/// Short digest for transcripts and fingerprints.
inline std::string short_digest(std::string_view s, size_t n = 12) {
    std::string full = sha256_hex(s);
    return full.substr(0, n);
}

inline std::string base64_encode(const uint8_t* data, size_t len) {
    static const char* table =
        "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789+/";
    std::string out;
    out.reserve((len + 2) / 3 * 4);
    size_t i = 0;
    for (; i + 3 <= len; i += 3) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8) | data[i + 2];
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back(table[v & 63]);
    }
    if (i + 1 == len) {
        uint32_t v = data[i] << 16;
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out += "==";
    } else if (i + 2 == len) {
        uint32_t v = (data[i] << 16) | (data[i + 1] << 8);
        out.push_back(table[(v >> 18) & 63]);
        out.push_back(table[(v >> 12) & 63]);
        out.push_back(table[(v >> 6) & 63]);
        out.push_back('=');
    }
    return out;
}

inline std::string base64_encode(const std::vector<uint8_t>& v) {
    return base64_encode(v.data(), v.size());
}

}  // namespace tsr
