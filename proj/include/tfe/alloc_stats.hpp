#pragma once

#include <cstdint>
#include <type_traits>
#include <utility>

namespace tfe::alloc {

// Tensor payload accounting for one thread of execution. Counts payload bytes
// only; container bookkeeping is excluded so peak numbers are platform-stable.
struct AllocStats {
    std::int64_t live_bytes = 0;
    std::int64_t peak_bytes = 0;
    std::int64_t alloc_events = 0;
};

// Called by the tensor allocator. No-ops when no scope is open on this thread.
void on_alloc(std::int64_t bytes) noexcept;
void on_free(std::int64_t bytes) noexcept;

// RAII measurement frame. Scopes nest; an inner scope's peak never exceeds the
// enclosing scope's peak for allocation-balanced computations.
class AllocScope {
public:
    AllocScope();
    AllocScope(const AllocScope&) = delete;
    AllocScope& operator=(const AllocScope&) = delete;
    ~AllocScope();

    AllocStats current() const;  // stats observed so far
    AllocStats finish();         // closes the frame and returns final stats

private:
    std::size_t index_ = 0;
    bool open_ = false;
    AllocStats final_{};
};

// Runs f under a fresh scope; returns (result, stats), or just stats for void.
template <class F>
auto alloc_scope(F&& f) {
    AllocScope scope;
    if constexpr (std::is_void_v<std::invoke_result_t<F>>) {
        std::forward<F>(f)();
        return scope.finish();
    } else {
        auto result = std::forward<F>(f)();
        return std::pair{std::move(result), scope.finish()};
    }
}

}  // namespace tfe::alloc
