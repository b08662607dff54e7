#include "formlink/threading.hpp"

#include <atomic>
#include <condition_variable>
#include <cstdlib>
#include <mutex>
#include <thread>
#include <vector>

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace formlink {
namespace {

#if defined(__GLIBC__)
// the training loop allocates and frees many multi-megabyte tensors per
// sample; keeping them on the heap instead of mmap avoids page-fault churn
struct MallocTuning {
  MallocTuning() {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 512 * 1024 * 1024);
  }
} g_malloc_tuning;
#endif

thread_local bool g_inside_worker = false;

int default_threads() {
  if (const char* env = std::getenv("FORMLINK_THREADS")) {
    int n = std::atoi(env);
    if (n >= 1) return n;
  }
  unsigned hc = std::thread::hardware_concurrency();
  return hc == 0 ? 1 : static_cast<int>(hc);
}

class Pool {
 public:
  static Pool& instance() {
    static Pool pool;
    return pool;
  }

  int size() {
    std::lock_guard<std::mutex> lock(mutex_);
    return requested_;
  }

  void set_size(int n) {
    std::lock_guard<std::mutex> lock(mutex_);
    requested_ = n < 1 ? 1 : n;
  }

  void run(int n_tasks, const std::function<void(int)>& fn) {
    int workers;
    {
      std::lock_guard<std::mutex> lock(mutex_);
      workers = requested_;
    }
    if (workers <= 1 || n_tasks <= 1 || g_inside_worker) {
      for (int i = 0; i < n_tasks; ++i) fn(i);
      return;
    }
    ensure_threads(workers - 1);

    std::unique_lock<std::mutex> lock(job_mutex_);
    job_fn_ = &fn;
    job_tasks_ = n_tasks;
    job_next_.store(0, std::memory_order_relaxed);
    job_done_.store(0, std::memory_order_relaxed);
    ++generation_;
    lock.unlock();
    cv_.notify_all();

    work(fn, n_tasks);  // caller participates

    std::unique_lock<std::mutex> wait_lock(job_mutex_);
    finished_cv_.wait(wait_lock, [&] { return job_done_.load() >= job_tasks_; });
    job_fn_ = nullptr;
  }

 private:
  Pool() = default;

  ~Pool() {
    {
      std::lock_guard<std::mutex> lock(job_mutex_);
      shutdown_ = true;
      ++generation_;
    }
    cv_.notify_all();
    for (auto& t : threads_) t.join();
  }

  void ensure_threads(int n) {
    std::lock_guard<std::mutex> lock(job_mutex_);
    while (static_cast<int>(threads_.size()) < n) {
      threads_.emplace_back([this] { worker_loop(); });
    }
  }

  void worker_loop() {
    g_inside_worker = true;
    uint64_t seen = 0;
    while (true) {
      const std::function<void(int)>* fn = nullptr;
      int n_tasks = 0;
      {
        std::unique_lock<std::mutex> lock(job_mutex_);
        cv_.wait(lock, [&] { return shutdown_ || generation_ != seen; });
        seen = generation_;
        if (shutdown_) return;
        fn = job_fn_;
        n_tasks = job_tasks_;
      }
      if (fn) work(*fn, n_tasks);
    }
  }

  void work(const std::function<void(int)>& fn, int n_tasks) {
    while (true) {
      int i = job_next_.fetch_add(1, std::memory_order_relaxed);
      if (i >= n_tasks) break;
      fn(i);
      if (job_done_.fetch_add(1) + 1 >= n_tasks) {
        std::lock_guard<std::mutex> lock(job_mutex_);
        finished_cv_.notify_all();
      }
    }
  }

  std::mutex mutex_;
  int requested_ = default_threads();

  std::mutex job_mutex_;
  std::condition_variable cv_;
  std::condition_variable finished_cv_;
  std::vector<std::thread> threads_;
  const std::function<void(int)>* job_fn_ = nullptr;
  int job_tasks_ = 0;
  std::atomic<int> job_next_{0};
  std::atomic<int> job_done_{0};
  uint64_t generation_ = 0;
  bool shutdown_ = false;
};

}  // namespace

int thread_count() { return Pool::instance().size(); }

void set_thread_count(int n) { Pool::instance().set_size(n); }

void parallel_for(int n, const std::function<void(int)>& fn) {
  if (n <= 0) return;
  Pool::instance().run(n, fn);
}

}  // namespace formlink
