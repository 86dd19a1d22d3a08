#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "fasucm/core/error.hpp"
#include "fasucm/core/hash.hpp"
#include "fasucm/core/tensor.hpp"

namespace fasucm {

static_assert(std::endian::native == std::endian::little, "archive IO assumes little-endian host");

/// Flat named-tensor container.
///
/// Layout (little-endian):
///   magic "FTA1" | u32 count | count x { u32 name_len | name bytes | u64 n,c,h,w | f32 values }
/// Entries keep insertion order; names are unique.
class TensorArchive {
public:
	void put(const std::string& name, Tensor<float> t) {
		if (auto it = index_.find(name); it != index_.end()) {
			entries_[it->second].second = std::move(t);
			return;
		}
		index_.emplace(name, entries_.size());
		entries_.emplace_back(name, std::move(t));
	}

	bool contains(const std::string& name) const { return index_.count(name) != 0; }

	const Tensor<float>& get(const std::string& name) const {
		auto it = index_.find(name);
		if (it == index_.end()) throw ParseError("tensor archive has no entry '" + name + "'");
		return entries_[it->second].second;
	}

	const std::vector<std::pair<std::string, Tensor<float>>>& entries() const { return entries_; }
	std::size_t size() const { return entries_.size(); }

	/// SHA-256 over names, extents and values in entry order.
	std::string checksum() const {
		Sha256 h;
		for (const auto& [name, t] : entries_) {
			h.update(name);
			const std::uint64_t dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
			h.update(dims, sizeof dims);
			h.update(t.data(), t.size() * sizeof(float));
		}
		return h.hex();
	}

	void save(const std::filesystem::path& path) const {
		std::ofstream out(path, std::ios::binary | std::ios::trunc);
		if (!out) throw IoError("cannot write tensor archive " + path.string());
		out.write("FTA1", 4);
		write_u32(out, static_cast<std::uint32_t>(entries_.size()));
		for (const auto& [name, t] : entries_) {
			write_u32(out, static_cast<std::uint32_t>(name.size()));
			out.write(name.data(), static_cast<std::streamsize>(name.size()));
			const std::uint64_t dims[4] = {t.shape().n, t.shape().c, t.shape().h, t.shape().w};
			out.write(reinterpret_cast<const char*>(dims), sizeof dims);
			out.write(reinterpret_cast<const char*>(t.data()),
			          static_cast<std::streamsize>(t.size() * sizeof(float)));
		}
		if (!out) throw IoError("short write to " + path.string());
	}

	static TensorArchive load(const std::filesystem::path& path) {
		std::ifstream in(path, std::ios::binary);
		if (!in) throw ConfigError("tensor archive not found: " + path.string());
		char magic[4];
		in.read(magic, 4);
		if (!in || std::memcmp(magic, "FTA1", 4) != 0)
			throw ParseError(path.string() + ": not a tensor archive");
		TensorArchive a;
		const std::uint32_t count = read_u32(in, path, "<header>");
		for (std::uint32_t i = 0; i < count; ++i) {
			const std::uint32_t len = read_u32(in, path, "<entry " + std::to_string(i) + ">");
			if (len > 4096) throw ParseError(path.string() + ": corrupt entry name length");
			std::string name(len, '\0');
			in.read(name.data(), len);
			std::uint64_t dims[4];
			in.read(reinterpret_cast<char*>(dims), sizeof dims);
			if (!in) throw ParseError(path.string() + ": truncated at tensor '" + name + "'");
			const Shape s{dims[0], dims[1], dims[2], dims[3]};
			if (s.count() > (std::uint64_t{1} << 34))
				throw ParseError(path.string() + ": implausible extent for '" + name + "'");
			Tensor<float> t(s);
			in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * sizeof(float)));
			if (!in) throw ParseError(path.string() + ": truncated at tensor '" + name + "'");
			a.put(name, std::move(t));
		}
		return a;
	}

private:
	static void write_u32(std::ofstream& out, std::uint32_t v) {
		out.write(reinterpret_cast<const char*>(&v), sizeof v);
	}
	static std::uint32_t read_u32(std::ifstream& in, const std::filesystem::path& path,
	                              const std::string& where) {
		std::uint32_t v = 0;
		in.read(reinterpret_cast<char*>(&v), sizeof v);
		if (!in) throw ParseError(path.string() + ": truncated at " + where);
		return v;
	}

	std::vector<std::pair<std::string, Tensor<float>>> entries_;
	std::map<std::string, std::size_t> index_;
};

} // namespace fasucm
