#pragma once

#include <openssl/evp.h>

#include <array>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <memory>
#include <span>
#include <string>
#include <string_view>

#include "fasucm/core/error.hpp"

namespace fasucm {

/// Incremental SHA-256 (OpenSSL EVP), hex-encoded digests.
class Sha256 {
public:
	Sha256() : ctx_(EVP_MD_CTX_new(), &EVP_MD_CTX_free) {
		if (!ctx_ || EVP_DigestInit_ex(ctx_.get(), EVP_sha256(), nullptr) != 1)
			throw Error("sha256: digest initialisation failed");
	}

	Sha256& update(const void* data, std::size_t size) {
		EVP_DigestUpdate(ctx_.get(), data, size);
		return *this;
	}
	Sha256& update(std::string_view s) { return update(s.data(), s.size()); }
	template <class T>
	Sha256& update(std::span<const T> values) {
		return update(values.data(), values.size_bytes());
	}

	std::string hex() {
		std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
		unsigned int len = 0;
		EVP_DigestFinal_ex(ctx_.get(), md.data(), &len);
		static constexpr char digits[] = "0123456789abcdef";
		std::string out;
		out.reserve(len * 2);
		for (unsigned int i = 0; i < len; ++i) {
			out.push_back(digits[md[i] >> 4]);
			out.push_back(digits[md[i] & 0xf]);
		}
		return out;
	}

private:
	std::unique_ptr<EVP_MD_CTX, decltype(&EVP_MD_CTX_free)> ctx_;
};

inline std::string sha256_hex(std::string_view s) { return Sha256().update(s).hex(); }

inline std::string sha256_file(const std::filesystem::path& path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) throw IoError("cannot open " + path.string());
	Sha256 h;
	std::array<char, 1 << 16> buf{};
	while (in) {
		in.read(buf.data(), buf.size());
		h.update(buf.data(), static_cast<std::size_t>(in.gcount()));
	}
	return h.hex();
}

} // namespace fasucm
