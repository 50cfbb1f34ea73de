#pragma once

#include "bialign/errors.hpp"
#include "bialign/rng.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace bialign::taskgen {

// Fixed enumerable vocabulary shared by teacher and student.
namespace vocab {
inline constexpr int pad = 0;
inline constexpr int bos = 1;
inline constexpr int sep = 2;  // separates input from output
inline constexpr int eod = 3;  // closes one demonstration
inline constexpr int eos = 4;  // answer terminator / decode stop token
inline constexpr int sym0 = 5; // 16 symbol tokens: [5, 21)
inline constexpr int n_symbols = 16;
inline constexpr int dig0 = 21; // 16 digit tokens: [21, 37)
inline constexpr int n_digits = 16;
inline constexpr int size = 37;
} // namespace vocab

// Four hidden-rule families. The first two are sources (alignment training),
// the last two are held-out targets (downstream evaluation); the sets never
// overlap.
enum class FamilyId { symbol_map, mod_affine, key_value, flag_transform };

const char* family_name(FamilyId f);
FamilyId family_from_name(const std::string& name);
bool family_is_source(FamilyId f);
std::vector<FamilyId> source_families();
std::vector<FamilyId> target_families();
// Accepts "src", "tgt", "all", or a comma-separated list of family names.
std::vector<FamilyId> parse_family_list(const std::string& spec);
// Throws ConfigError if the two sets intersect.
void validate_disjoint(const std::vector<FamilyId>& train, const std::vector<FamilyId>& eval);

// Hidden per-instance rule, storable as a flat int list:
//   symbol_map:     image of each of the 16 symbols under a hidden bijection
//   mod_affine:     {a, b} with output digit = (a*x + b) mod 16
//   key_value:      empty (the demo set itself is the lookup table)
//   flag_transform: {flag} with 0 = copy, 1 = reverse
struct Rule {
    FamilyId family{};
    std::vector<int> params;
    bool operator==(const Rule&) const = default;
};

struct Demo {
    std::vector<int> input;
    std::vector<int> output;
    bool operator==(const Demo&) const = default;
};

// Re-applies the hidden rule; key_value needs the demonstrations.
std::vector<int> apply_rule(const Rule& rule, const std::vector<Demo>& demos,
                            const std::vector<int>& input);

struct Span {
    int begin = 0;
    int end = 0; // exclusive
    bool operator==(const Span&) const = default;
};

struct ICLSample {
    std::string id;
    FamilyId family{};
    int k = 0;
    Rule rule;
    std::vector<Demo> demos;
    Demo query;
    // Rendering of the full sample: BOS, then each demo as
    // "input SEP output EOD", then "query-input SEP answer EOS".
    std::vector<int> tokens;
    std::vector<Span> demo_spans;    // per demo, input through its EOD
    Span query_input_span;           // the query input tokens
    Span answer_span;                // exactly the answer tokens (EOS excluded)
    std::vector<std::vector<int>> subsets; // presampled demo-index subsets, may be empty

    bool operator==(const ICLSample&) const = default;
};

struct SubsetSelection {
    std::vector<int> indices; // strictly increasing demo indices, may be empty
    std::vector<int> tokens;  // selected demos in original order, then the query
    Span answer_span;
};

struct RenderResult {
    std::vector<int> tokens;
    std::vector<Span> demo_spans;
    Span query_input_span;
    Span answer_span;
};

RenderResult render(const std::vector<Demo>& demos, const Demo& query);

// Rendering used for preference scoring: the chosen demonstrations keep their
// original relative order, followed by the query and its answer.
SubsetSelection render_subset(const ICLSample& sample, const std::vector<int>& indices);

ICLSample make_sample(FamilyId family, int k, Rng& rng, const std::string& id);

// Deterministic: sample i draws only from Rng(derive(seed, i)), so the result
// is independent of generation order.
std::vector<ICLSample> generate_dataset(const std::vector<FamilyId>& families, int count,
                                        int k_min, int k_max, std::uint64_t seed);

enum class SubsetMethod { uniform, size_stratified };
const char* subset_method_name(SubsetMethod m);
SubsetMethod subset_method_from_name(const std::string& name);

// N distinct subsets of {0..k-1}. uniform draws without replacement from the
// full power set; size_stratified picks pairwise-distinct cardinalities where
// possible. N > 2^k is infeasible.
std::vector<std::vector<int>> sample_subsets(const ICLSample& sample, int n, SubsetMethod method,
                                             std::uint64_t seed);

// Attaches N presampled subsets to every sample (subset batch for training).
void attach_subsets(std::vector<ICLSample>& samples, int n, SubsetMethod method,
                    std::uint64_t seed);

// Line-delimited JSON, one sample per line; read(write(x)) == x.
void write_dataset(const std::string& path, const std::vector<ICLSample>& samples);
std::vector<ICLSample> read_dataset(const std::string& path);

// Upper bound on rendered length for k demonstrations (for max_seq_len checks).
int max_render_tokens(int k);

} // namespace bialign::taskgen
