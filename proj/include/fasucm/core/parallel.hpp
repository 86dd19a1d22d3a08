#pragma once

#include <algorithm>
#include <atomic>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace fasucm {

/// Runs fn(i) for i in [0, n) on up to `jobs` threads (the caller included).
/// The first exception stops the remaining work and is rethrown.
template <class Fn>
void parallel_for(std::size_t n, std::size_t jobs, Fn fn) {
	std::atomic<std::size_t> next{0};
	std::atomic<bool> failed{false};
	std::exception_ptr error;
	std::mutex mu;
	auto worker = [&] {
		while (!failed) {
			const std::size_t i = next++;
			if (i >= n) return;
			try {
				fn(i);
			} catch (...) {
				std::lock_guard lock(mu);
				if (!error) error = std::current_exception();
				failed = true;
			}
		}
	};
	std::vector<std::thread> pool;
	for (std::size_t j = 1; j < std::min(jobs, n); ++j) pool.emplace_back(worker);
	worker();
	for (auto& t : pool) t.join();
	if (error) std::rethrow_exception(error);
}

} // namespace fasucm
