#include "bialign/taskgen.hpp"

#include <json.hpp>

#include <algorithm>
#include <fstream>
#include <set>
#include <sstream>

namespace bialign::taskgen {

using nlohmann::json;

const char* family_name(FamilyId f) {
    switch (f) {
        case FamilyId::symbol_map: return "symbol_map";
        case FamilyId::mod_affine: return "mod_affine";
        case FamilyId::key_value: return "key_value";
        case FamilyId::flag_transform: return "flag_transform";
    }
    throw UsageError("unknown family id");
}

FamilyId family_from_name(const std::string& name) {
    for (FamilyId f : {FamilyId::symbol_map, FamilyId::mod_affine, FamilyId::key_value,
                       FamilyId::flag_transform})
        if (name == family_name(f)) return f;
    throw ConfigError("unknown task family: " + name);
}

bool family_is_source(FamilyId f) {
    return f == FamilyId::symbol_map || f == FamilyId::mod_affine;
}

std::vector<FamilyId> source_families() {
    return {FamilyId::symbol_map, FamilyId::mod_affine};
}

std::vector<FamilyId> target_families() {
    return {FamilyId::key_value, FamilyId::flag_transform};
}

std::vector<FamilyId> parse_family_list(const std::string& spec) {
    if (spec == "src") return source_families();
    if (spec == "tgt") return target_families();
    if (spec == "all") {
        auto all = source_families();
        for (FamilyId f : target_families()) all.push_back(f);
        return all;
    }
    std::vector<FamilyId> out;
    std::stringstream ss(spec);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (!item.empty()) out.push_back(family_from_name(item));
    }
    if (out.empty()) throw ConfigError("empty family list: '" + spec + "'");
    return out;
}

void validate_disjoint(const std::vector<FamilyId>& train, const std::vector<FamilyId>& eval) {
    for (FamilyId a : train)
        for (FamilyId b : eval)
            if (a == b)
                throw ConfigError(std::string("source/target family overlap: ") + family_name(a));
}

std::vector<int> apply_rule(const Rule& rule, const std::vector<Demo>& demos,
                            const std::vector<int>& input) {
    switch (rule.family) {
        case FamilyId::symbol_map: {
            std::vector<int> out;
            out.reserve(input.size());
            for (int tok : input) {
                const int s = tok - vocab::sym0;
                if (s < 0 || s >= vocab::n_symbols)
                    throw UsageError("symbol_map rule applied to a non-symbol token");
                out.push_back(vocab::sym0 + rule.params.at(static_cast<std::size_t>(s)));
            }
            return out;
        }
        case FamilyId::mod_affine: {
            const int a = rule.params.at(0), b = rule.params.at(1);
            const int x = input.at(0) - vocab::dig0;
            if (x < 0 || x >= vocab::n_digits)
                throw UsageError("mod_affine rule applied to a non-digit token");
            return {vocab::dig0 + (a * x + b) % vocab::n_digits};
        }
        case FamilyId::key_value: {
            for (const auto& d : demos)
                if (d.input == input) return d.output;
            throw UsageError("key_value query key not present among demonstrations");
        }
        case FamilyId::flag_transform: {
            std::vector<int> out = input;
            if (rule.params.at(0) == 1) std::reverse(out.begin(), out.end());
            return out;
        }
    }
    throw UsageError("unknown family id");
}

RenderResult render(const std::vector<Demo>& demos, const Demo& query) {
    RenderResult r;
    r.tokens.push_back(vocab::bos);
    for (const auto& d : demos) {
        Span span;
        span.begin = static_cast<int>(r.tokens.size());
        r.tokens.insert(r.tokens.end(), d.input.begin(), d.input.end());
        r.tokens.push_back(vocab::sep);
        r.tokens.insert(r.tokens.end(), d.output.begin(), d.output.end());
        r.tokens.push_back(vocab::eod);
        span.end = static_cast<int>(r.tokens.size());
        r.demo_spans.push_back(span);
    }
    r.query_input_span.begin = static_cast<int>(r.tokens.size());
    r.tokens.insert(r.tokens.end(), query.input.begin(), query.input.end());
    r.query_input_span.end = static_cast<int>(r.tokens.size());
    r.tokens.push_back(vocab::sep);
    r.answer_span.begin = static_cast<int>(r.tokens.size());
    r.tokens.insert(r.tokens.end(), query.output.begin(), query.output.end());
    r.answer_span.end = static_cast<int>(r.tokens.size());
    r.tokens.push_back(vocab::eos);
    return r;
}

SubsetSelection render_subset(const ICLSample& sample, const std::vector<int>& indices) {
    SubsetSelection sel;
    sel.indices = indices;
    std::vector<Demo> chosen;
    int prev = -1;
    for (int idx : indices) {
        if (idx <= prev || idx >= sample.k)
            throw UsageError("render_subset: indices must be strictly increasing and < k");
        prev = idx;
        chosen.push_back(sample.demos[static_cast<std::size_t>(idx)]);
    }
    auto r = render(chosen, sample.query);
    sel.tokens = std::move(r.tokens);
    sel.answer_span = r.answer_span;
    return sel;
}

int max_render_tokens(int k) {
    // demo: 3 input + sep + 3 output + eod; query adds the same plus bos
    return 1 + 8 * (k + 1);
}

namespace {

std::vector<int> random_symbols(Rng& rng, int len) {
    std::vector<int> v(static_cast<std::size_t>(len));
    for (auto& t : v) t = vocab::sym0 + static_cast<int>(rng.below(vocab::n_symbols));
    return v;
}

// Draws a fresh input not yet in `used`, with an optional acceptance filter.
template <class Gen, class Ok>
std::vector<int> draw_distinct(Rng& rng, std::set<std::vector<int>>& used, Gen gen, Ok ok) {
    for (int attempt = 0; attempt < 10000; ++attempt) {
        auto cand = gen(rng);
        if (!ok(cand) || used.count(cand)) continue;
        used.insert(cand);
        return cand;
    }
    throw DataError("alphabet too small to produce the required number of distinct inputs");
}

} // namespace

ICLSample make_sample(FamilyId family, int k, Rng& rng, const std::string& id) {
    if (k < 1) throw UsageError("make_sample: k must be >= 1");
    ICLSample s;
    s.id = id;
    s.family = family;
    s.k = k;
    s.rule.family = family;

    switch (family) {
        case FamilyId::symbol_map: {
            std::vector<int> perm(vocab::n_symbols);
            for (int i = 0; i < vocab::n_symbols; ++i) perm[static_cast<std::size_t>(i)] = i;
            rng.shuffle(perm);
            s.rule.params = perm;
            std::set<std::vector<int>> used;
            for (int j = 0; j < k; ++j) {
                auto in = draw_distinct(
                    rng, used, [](Rng& r) { return random_symbols(r, 3); },
                    [](const std::vector<int>&) { return true; });
                s.demos.push_back({in, apply_rule(s.rule, {}, in)});
            }
            // query symbols must occur in some demonstration input, otherwise
            // the hidden bijection is not identifiable in context
            std::set<int> seen;
            for (const auto& d : s.demos)
                for (int t : d.input) seen.insert(t);
            std::vector<int> pool(seen.begin(), seen.end());
            auto qin = draw_distinct(
                rng, used,
                [&pool](Rng& r) {
                    std::vector<int> v(3);
                    for (auto& t : v) t = pool[r.below(pool.size())];
                    return v;
                },
                [](const std::vector<int>&) { return true; });
            s.query = {qin, apply_rule(s.rule, {}, qin)};
            break;
        }
        case FamilyId::mod_affine: {
            if (k + 1 > vocab::n_digits)
                throw DataError("alphabet too small: mod_affine needs k+1 distinct digits");
            static const int units[] = {1, 3, 5, 7, 9, 11, 13, 15};
            s.rule.params = {units[rng.below(8)], static_cast<int>(rng.below(vocab::n_digits))};
            auto xs = rng.choice(vocab::n_digits, k + 1);
            for (int j = 0; j < k; ++j) {
                const std::vector<int> in = {vocab::dig0 + xs[static_cast<std::size_t>(j)]};
                s.demos.push_back({in, apply_rule(s.rule, {}, in)});
            }
            const std::vector<int> qin = {vocab::dig0 + xs[static_cast<std::size_t>(k)]};
            s.query = {qin, apply_rule(s.rule, {}, qin)};
            break;
        }
        case FamilyId::key_value: {
            if (k > vocab::n_digits)
                throw DataError("alphabet too small: key_value needs k distinct keys");
            auto keys = rng.choice(vocab::n_digits, k);
            for (int j = 0; j < k; ++j) {
                const std::vector<int> in = {vocab::dig0 + keys[static_cast<std::size_t>(j)]};
                const std::vector<int> out = {vocab::dig0 +
                                              static_cast<int>(rng.below(vocab::n_digits))};
                s.demos.push_back({in, out});
            }
            const int pick = static_cast<int>(rng.below(static_cast<std::uint64_t>(k)));
            s.query.input = s.demos[static_cast<std::size_t>(pick)].input;
            s.query.output = apply_rule(s.rule, s.demos, s.query.input);
            break;
        }
        case FamilyId::flag_transform: {
            s.rule.params = {static_cast<int>(rng.below(2))};
            // non-palindromic inputs keep copy and reverse distinguishable
            auto non_palindromic = [](const std::vector<int>& v) { return v.front() != v.back(); };
            std::set<std::vector<int>> used;
            for (int j = 0; j < k; ++j) {
                auto in = draw_distinct(
                    rng, used, [](Rng& r) { return random_symbols(r, 3); }, non_palindromic);
                s.demos.push_back({in, apply_rule(s.rule, {}, in)});
            }
            auto qin = draw_distinct(
                rng, used, [](Rng& r) { return random_symbols(r, 3); }, non_palindromic);
            s.query = {qin, apply_rule(s.rule, {}, qin)};
            break;
        }
    }

    auto r = render(s.demos, s.query);
    s.tokens = std::move(r.tokens);
    s.demo_spans = std::move(r.demo_spans);
    s.query_input_span = r.query_input_span;
    s.answer_span = r.answer_span;
    return s;
}

std::vector<ICLSample> generate_dataset(const std::vector<FamilyId>& families, int count,
                                        int k_min, int k_max, std::uint64_t seed) {
    if (families.empty()) throw ConfigError("generate_dataset: no families given");
    if (k_min < 1 || k_max < k_min)
        throw ConfigError("generate_dataset: need 1 <= k_min <= k_max");
    std::vector<ICLSample> out;
    out.reserve(static_cast<std::size_t>(count));
    for (int i = 0; i < count; ++i) {
        Rng rng(Rng::derive(seed, static_cast<std::uint64_t>(i)));
        const FamilyId family = families[rng.below(families.size())];
        const int k = k_min + static_cast<int>(rng.below(static_cast<std::uint64_t>(k_max - k_min + 1)));
        char id[64];
        std::snprintf(id, sizeof id, "%s-%06d", family_name(family), i);
        out.push_back(make_sample(family, k, rng, id));
    }
    return out;
}

const char* subset_method_name(SubsetMethod m) {
    return m == SubsetMethod::uniform ? "uniform" : "size_stratified";
}

SubsetMethod subset_method_from_name(const std::string& name) {
    if (name == "uniform") return SubsetMethod::uniform;
    if (name == "size_stratified" || name == "size-stratified") return SubsetMethod::size_stratified;
    throw ConfigError("unknown subset method: " + name);
}

namespace {

std::vector<int> mask_to_indices(std::uint64_t mask, int k) {
    std::vector<int> idx;
    for (int i = 0; i < k; ++i)
        if (mask & (1ull << i)) idx.push_back(i);
    return idx;
}

} // namespace

std::vector<std::vector<int>> sample_subsets(const ICLSample& sample, int n, SubsetMethod method,
                                             std::uint64_t seed) {
    const int k = sample.k;
    if (n < 1) throw UsageError("sample_subsets: n must be >= 1");
    if (k > 62) throw UsageError("sample_subsets: k too large");
    if (static_cast<std::uint64_t>(n) > (1ull << k))
        throw DataError("sample_subsets: cannot draw " + std::to_string(n) +
                        " distinct subsets of " + std::to_string(k) + " demonstrations");
    Rng rng(seed);
    std::vector<std::vector<int>> out;
    if (method == SubsetMethod::uniform) {
        if (k <= 16) {
            const int total = 1 << k;
            for (int pick : rng.choice(total, n))
                out.push_back(mask_to_indices(static_cast<std::uint64_t>(pick), k));
        } else {
            std::set<std::uint64_t> seen;
            while (static_cast<int>(out.size()) < n) {
                const std::uint64_t mask = rng.below(1ull << k);
                if (seen.insert(mask).second) out.push_back(mask_to_indices(mask, k));
            }
        }
    } else {
        std::set<std::vector<int>> seen;
        std::vector<int> sizes;
        if (n <= k + 1) {
            sizes = rng.choice(k + 1, n);
        } else {
            sizes = rng.choice(k + 1, k + 1);
        }
        for (int c : sizes) {
            auto idx = rng.choice(k, c);
            std::sort(idx.begin(), idx.end());
            seen.insert(idx);
            out.push_back(std::move(idx));
        }
        // distinct cardinalities are exhausted; fill the remainder with any
        // unseen subsets
        while (static_cast<int>(out.size()) < n) {
            const int c = static_cast<int>(rng.below(static_cast<std::uint64_t>(k) + 1));
            auto idx = rng.choice(k, c);
            std::sort(idx.begin(), idx.end());
            if (seen.insert(idx).second) out.push_back(std::move(idx));
        }
    }
    return out;
}

void attach_subsets(std::vector<ICLSample>& samples, int n, SubsetMethod method,
                    std::uint64_t seed) {
    // separate stream id space from generate_dataset's per-sample streams
    constexpr std::uint64_t kSubsetStreamBase = 0x5337000000000000ull;
    for (std::size_t i = 0; i < samples.size(); ++i)
        samples[i].subsets =
            sample_subsets(samples[i], n, method, Rng::derive(seed, kSubsetStreamBase + i));
}

namespace {

json demo_to_json(const Demo& d) { return json::array({d.input, d.output}); }

Demo demo_from_json(const json& j) {
    Demo d;
    d.input = j.at(0).get<std::vector<int>>();
    d.output = j.at(1).get<std::vector<int>>();
    return d;
}

json span_to_json(const Span& s) { return json::array({s.begin, s.end}); }

Span span_from_json(const json& j) { return {j.at(0).get<int>(), j.at(1).get<int>()}; }

} // namespace

void write_dataset(const std::string& path, const std::vector<ICLSample>& samples) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw DataError("cannot open dataset for writing: " + path);
    for (const auto& s : samples) {
        json rec;
        rec["id"] = s.id;
        rec["family"] = family_name(s.family);
        rec["k"] = s.k;
        rec["rule"] = s.rule.params;
        json demos = json::array();
        for (const auto& d : s.demos) demos.push_back(demo_to_json(d));
        rec["demos"] = demos;
        rec["query"] = demo_to_json(s.query);
        rec["tokens"] = s.tokens;
        json demo_spans = json::array();
        for (const auto& sp : s.demo_spans) demo_spans.push_back(span_to_json(sp));
        rec["spans"] = {{"demos", demo_spans},
                        {"query_input", span_to_json(s.query_input_span)},
                        {"answer", span_to_json(s.answer_span)}};
        rec["subsets"] = s.subsets;
        out << rec.dump() << "\n";
    }
    if (!out) throw DataError("failed while writing dataset: " + path);
}

std::vector<ICLSample> read_dataset(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open dataset: " + path);
    std::vector<ICLSample> out;
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        try {
            const json rec = json::parse(line);
            ICLSample s;
            s.id = rec.at("id").get<std::string>();
            s.family = family_from_name(rec.at("family").get<std::string>());
            s.k = rec.at("k").get<int>();
            s.rule.family = s.family;
            s.rule.params = rec.at("rule").get<std::vector<int>>();
            for (const auto& d : rec.at("demos")) s.demos.push_back(demo_from_json(d));
            s.query = demo_from_json(rec.at("query"));
            s.tokens = rec.at("tokens").get<std::vector<int>>();
            const auto& spans = rec.at("spans");
            for (const auto& sp : spans.at("demos")) s.demo_spans.push_back(span_from_json(sp));
            s.query_input_span = span_from_json(spans.at("query_input"));
            s.answer_span = span_from_json(spans.at("answer"));
            s.subsets = rec.at("subsets").get<std::vector<std::vector<int>>>();
            if (s.k != static_cast<int>(s.demos.size()))
                throw DataError("k does not match demo count");
            if (s.answer_span.begin >= s.answer_span.end ||
                s.answer_span.end > static_cast<int>(s.tokens.size()))
                throw DataError("answer span out of bounds");
            out.push_back(std::move(s));
        } catch (const json::exception& e) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        } catch (const DataError& e) {
            throw DataError(path + ": line " + std::to_string(line_no) + ": " + e.what());
        }
    }
    return out;
}

} // namespace bialign::taskgen
