#ifndef NNMR_PARALLEL_HPP_
#define NNMR_PARALLEL_HPP_

#include <algorithm>
#include <atomic>
#include <cstddef>
#include <exception>
#include <mutex>
#include <thread>
#include <vector>

namespace nnmr {

/// Runs body(i) for i in [0, count) on up to `threads` workers. Each index is
/// visited exactly once; callers write results into slot i so the outcome does
/// not depend on scheduling. The first exception thrown is rethrown here.
template<typename Body>
void parallel_for(std::size_t count, std::size_t threads, Body&& body) {
	threads = std::max<std::size_t>(1, std::min(threads, count));
	if (threads == 1) {
		for (std::size_t i = 0; i < count; ++i)
			body(i);
		return;
	}
	std::atomic<std::size_t> next{0};
	std::exception_ptr failure;
	std::mutex failure_mutex;
	auto worker = [&] {
		for (std::size_t i = next++; i < count; i = next++) {
			try {
				body(i);
			} catch (...) {
				std::lock_guard lock(failure_mutex);
				if (!failure)
					failure = std::current_exception();
			}
		}
	};
	std::vector<std::jthread> pool;
	pool.reserve(threads - 1);
	for (std::size_t t = 1; t < threads; ++t)
		pool.emplace_back(worker);
	worker();
	pool.clear();
	if (failure)
		std::rethrow_exception(failure);
}

}

#endif /* NNMR_PARALLEL_HPP_ */
