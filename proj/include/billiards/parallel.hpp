#pragma once

#include <functional>

namespace billiards {

/// Worker-thread cap: BILLIARD_THREADS if set, otherwise the hardware count.
int thread_budget();

/// Runs fn(i) for i in [0, count) on up to thread_budget() threads.
/// Callers make results deterministic by writing into index-addressed slots.
void parallel_for(int count, const std::function<void(int)>& fn);

}  // namespace billiards
