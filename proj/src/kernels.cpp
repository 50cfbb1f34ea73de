#include "bialign/kernels.hpp"

#include "bialign/errors.hpp"

#include <atomic>
#include <cstdlib>
#include <cstring>
#include <string>

namespace bialign::kernels {

const Table<float>& scalar_table_f32();
const Table<double>& scalar_table_f64();

#if defined(__x86_64__) || defined(_M_X64)
const Table<float>& avx2_table_f32();
const Table<double>& avx2_table_f64();
#endif

bool cpu_has_avx2() {
#if defined(__x86_64__) || defined(_M_X64)
    return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
    return false;
#endif
}

const char* backend_name(Backend b) {
    return b == Backend::avx2 ? "avx2" : "scalar";
}

namespace {

Backend detect_backend() {
    if (const char* env = std::getenv("BIALIGN_KERNELS")) {
        if (std::strcmp(env, "scalar") == 0) return Backend::scalar;
        if (std::strcmp(env, "avx2") == 0) {
            if (!cpu_has_avx2())
                throw ConfigError("BIALIGN_KERNELS=avx2 requested but CPU lacks AVX2/FMA");
            return Backend::avx2;
        }
        if (std::strcmp(env, "auto") != 0)
            throw ConfigError(std::string("unknown BIALIGN_KERNELS value: ") + env);
    }
    return cpu_has_avx2() ? Backend::avx2 : Backend::scalar;
}

std::atomic<Backend>& active_slot() {
    static std::atomic<Backend> slot{detect_backend()};
    return slot;
}

} // namespace

Backend active() { return active_slot().load(std::memory_order_relaxed); }

void force(Backend b) {
    if (b == Backend::avx2 && !cpu_has_avx2())
        throw ConfigError("cannot force avx2 kernels: CPU lacks AVX2/FMA");
    active_slot().store(b, std::memory_order_relaxed);
}

template <>
const Table<float>& table_for<float>(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2) return avx2_table_f32();
#endif
    (void)b;
    return scalar_table_f32();
}

template <>
const Table<double>& table_for<double>(Backend b) {
#if defined(__x86_64__) || defined(_M_X64)
    if (b == Backend::avx2) return avx2_table_f64();
#endif
    (void)b;
    return scalar_table_f64();
}

template <>
const Table<float>& table<float>() {
    return table_for<float>(active());
}

template <>
const Table<double>& table<double>() {
    return table_for<double>(active());
}

} // namespace bialign::kernels
