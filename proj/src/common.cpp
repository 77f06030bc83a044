#include "lop/common.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <map>
#include <mutex>
#include <thread>
#include <vector>

namespace lop {

namespace {
std::atomic<int> g_threads{0};  // 0 = unset, fall back to hardware

int hardware_default() {
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}
}  // namespace

void set_thread_budget(int n) { g_threads.store(n > 0 ? n : 0); }

int thread_budget() {
  int n = g_threads.load();
  return n > 0 ? n : hardware_default();
}

void parallel_for(Index n, const std::function<void(Index, Index)>& body) {
  if (n <= 0) return;
  int workers = std::min<Index>(thread_budget(), n);
  if (workers <= 1) {
    body(0, n);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(workers);
  Index chunk = (n + workers - 1) / workers;
  std::exception_ptr first_error;
  std::mutex error_mutex;
  for (int w = 0; w < workers; ++w) {
    Index begin = static_cast<Index>(w) * chunk;
    Index end = std::min(n, begin + chunk);
    if (begin >= end) break;
    pool.emplace_back([&, begin, end] {
      try {
        body(begin, end);
      } catch (...) {
        std::lock_guard<std::mutex> lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  if (first_error) std::rethrow_exception(first_error);
}

namespace audit {
namespace {
std::mutex g_mutex;
std::map<std::string, double>& table() {
  static std::map<std::string, double> t;
  return t;
}
}  // namespace

void note(const std::string& key, double value) {
  std::lock_guard<std::mutex> lock(g_mutex);
  double& slot = table()[key];
  slot = std::max(slot, value);
}

double peak(const std::string& key) {
  std::lock_guard<std::mutex> lock(g_mutex);
  auto it = table().find(key);
  return it == table().end() ? 0.0 : it->second;
}

void reset() {
  std::lock_guard<std::mutex> lock(g_mutex);
  table().clear();
}
}  // namespace audit

std::string format_g17(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", x);
  return buf;
}

std::uint64_t fnv1a(const std::string& bytes) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

}  // namespace lop
