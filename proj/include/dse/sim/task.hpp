#pragma once

// Coroutine plumbing for simulated processes.
//
// Task<T> starts eagerly and suspends only at its await points; a finished
// task hands control straight back to its awaiter (symmetric transfer), so
// causality inside one event is synchronous and deterministic. Task owns its
// frame: destroying a suspended task tears down the whole child tree, which
// is how a crash discards a process's in-flight work. Every leaf suspension
// (sleep, future) re-arms through a Domain, so completions belonging to a
// dead incarnation never resume into freed frames.

#include <coroutine>
#include <exception>
#include <memory>
#include <optional>
#include <utility>

#include "dse/sim/executor.hpp"

namespace dse::sim {

template <typename T>
class Task;

namespace detail {

template <typename T>
struct promise_storage {
  std::optional<T> value;
  void return_value(T v) { value = std::move(v); }
  T take() { return std::move(*value); }
};

template <>
struct promise_storage<void> {
  void return_void() {}
  void take() {}
};

}  // namespace detail

template <typename T = void>
class Task {
 public:
  struct promise_type : detail::promise_storage<T> {
    std::coroutine_handle<> continuation;
    bool finished = false;
    std::exception_ptr error;

    Task get_return_object() {
      return Task(std::coroutine_handle<promise_type>::from_promise(*this));
    }
    std::suspend_never initial_suspend() noexcept { return {}; }

    struct FinalAwaiter {
      bool await_ready() noexcept { return false; }
      std::coroutine_handle<> await_suspend(std::coroutine_handle<promise_type> h) noexcept {
        auto& p = h.promise();
        p.finished = true;
        return p.continuation ? p.continuation : std::noop_coroutine();
      }
      void await_resume() noexcept {}
    };
    FinalAwaiter final_suspend() noexcept { return {}; }
    void unhandled_exception() { error = std::current_exception(); }
  };

  Task() = default;
  explicit Task(std::coroutine_handle<promise_type> h) : handle_(h) {}
  Task(Task&& other) noexcept : handle_(std::exchange(other.handle_, {})) {}
  Task& operator=(Task&& other) noexcept {
    if (this != &other) {
      destroy();
      handle_ = std::exchange(other.handle_, {});
    }
    return *this;
  }
  Task(const Task&) = delete;
  Task& operator=(const Task&) = delete;
  ~Task() { destroy(); }

  bool valid() const { return static_cast<bool>(handle_); }
  bool done() const { return handle_ && handle_.promise().finished; }
  bool failed() const { return done() && handle_.promise().error; }

  void rethrow_if_failed() const {
    if (failed()) std::rethrow_exception(handle_.promise().error);
  }

  auto operator co_await() {
    struct Awaiter {
      std::coroutine_handle<promise_type> h;
      bool await_ready() const { return h.promise().finished; }
      void await_suspend(std::coroutine_handle<> cont) { h.promise().continuation = cont; }
      T await_resume() {
        if (h.promise().error) std::rethrow_exception(h.promise().error);
        return h.promise().take();
      }
    };
    return Awaiter{handle_};
  }

 private:
  void destroy() {
    if (handle_) {
      handle_.destroy();
      handle_ = {};
    }
  }

  std::coroutine_handle<promise_type> handle_;
};

// Suspends the caller for `delay` virtual microseconds of its domain's clock.
// If the domain dies meanwhile, the frame is never resumed (its owner
// destroys it).
inline auto sleep_for(Domain& d, std::uint64_t delay) {
  struct Awaiter {
    Domain& d;
    std::uint64_t delay;
    bool await_ready() const { return false; }
    void await_suspend(std::coroutine_handle<> h) {
      d.schedule(delay, [h] { h.resume(); });
    }
    void await_resume() {}
  };
  return Awaiter{d, delay};
}

// One-shot value channel between domains. The producer side (Promise) may
// outlive a crashed consumer: fulfillment re-arms through the consumer's
// domain, so a stale consumer is simply never resumed. First fulfillment
// wins; later ones are ignored (used for reply-vs-timeout races).
template <typename T>
class Future {
 public:
  struct State {
    std::optional<T> value;
    std::coroutine_handle<> waiter;
    Domain* waiter_domain = nullptr;
    std::uint64_t waiter_inc = 0;
  };

  Future() : state_(std::make_shared<State>()) {}

  std::shared_ptr<State> state() const { return state_; }
  bool ready() const { return state_->value.has_value(); }

  auto wait(Domain& d) {
    struct Awaiter {
      std::shared_ptr<State> s;
      Domain& d;
      bool await_ready() const { return s->value.has_value(); }
      void await_suspend(std::coroutine_handle<> h) {
        s->waiter = h;
        s->waiter_domain = &d;
        s->waiter_inc = d.incarnation();
      }
      T await_resume() { return std::move(*s->value); }
    };
    return Awaiter{state_, d};
  }

 private:
  std::shared_ptr<State> state_;
};

template <typename T>
class Promise {
 public:
  Promise() = default;
  explicit Promise(const Future<T>& f) : state_(f.state()) {}

  bool fulfilled() const { return state_ && state_->value.has_value(); }

  // Returns false if already fulfilled (the value is dropped).
  bool set(T v) {
    if (!state_ || state_->value.has_value()) return false;
    state_->value = std::move(v);
    if (state_->waiter && state_->waiter_domain &&
        state_->waiter_inc == state_->waiter_domain->incarnation() &&
        state_->waiter_domain->alive()) {
      auto h = state_->waiter;
      state_->waiter = nullptr;
      h.resume();
    }
    return true;
  }

 private:
  std::shared_ptr<typename Future<T>::State> state_;
};

}  // namespace dse::sim
