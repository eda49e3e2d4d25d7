#include "tfe/alloc_stats.hpp"

#include <algorithm>
#include <vector>

namespace tfe::alloc {

namespace {

struct Frame {
    std::int64_t base_live = 0;
    std::int64_t peak_delta = 0;
    std::int64_t events = 0;
};

thread_local std::int64_t g_live = 0;
thread_local std::vector<Frame> g_frames;

}  // namespace

void on_alloc(std::int64_t bytes) noexcept {
    if (bytes == 0) return;
    g_live += bytes;
    for (Frame& f : g_frames) {
        f.peak_delta = std::max(f.peak_delta, g_live - f.base_live);
        ++f.events;
    }
}

void on_free(std::int64_t bytes) noexcept {
    if (bytes == 0) return;
    g_live -= bytes;
}

AllocScope::AllocScope() {
    g_frames.push_back(Frame{g_live, 0, 0});
    index_ = g_frames.size() - 1;
    open_ = true;
}

AllocScope::~AllocScope() {
    if (open_) finish();
}

AllocStats AllocScope::current() const {
    if (!open_) return final_;
    const Frame& f = g_frames[index_];
    return AllocStats{g_live - f.base_live, f.peak_delta, f.events};
}

AllocStats AllocScope::finish() {
    if (!open_) return final_;
    final_ = current();
    open_ = false;
    g_frames.pop_back();
    return final_;
}

}  // namespace tfe::alloc
