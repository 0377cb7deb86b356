#include "ehr/probe/probe.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "ehr/errors.hpp"
#include "ehr/format.hpp"
#include "ehr/rng.hpp"

namespace ehr::probe {
namespace {

double dot(const std::vector<double>& a, const std::vector<double>& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

double norm(const std::vector<double>& a) { return std::sqrt(dot(a, a)); }

std::vector<double> group_centroid(const GroupSpec& group, const EmbeddingIndex& embeddings) {
    if (group.members.empty()) throw ConfigError("group '" + group.name + "' is empty");
    std::vector<const std::vector<double>*> rows;
    rows.reserve(group.members.size());
    for (const std::string& stay_id : group.members) rows.push_back(&embeddings.of(stay_id));
    return centroid(rows);
}

}  // namespace

GroupSpec resolve_group(const Dataset& dataset, std::string name,
                        std::set<std::string> required_tags) {
    GroupSpec group{std::move(name), std::move(required_tags), {}};
    for (const Stay& stay : dataset.stays) {
        const bool member = std::all_of(
            group.required_tags.begin(), group.required_tags.end(),
            [&stay](const std::string& tag) { return stay.tags.count(tag) != 0; });
        if (member) group.members.push_back(stay.stay_id);
    }
    return group;
}

EmbeddingIndex::EmbeddingIndex(const std::vector<net::VisitEmbedding>& rows) {
    for (const net::VisitEmbedding& row : rows) {
        if (by_id_.empty()) {
            dim_ = row.values.size();
        } else if (row.values.size() != dim_) {
            throw ShapeError("embedding for " + row.stay_id + " has width " +
                             std::to_string(row.values.size()) + ", expected " +
                             std::to_string(dim_));
        }
        if (!by_id_.emplace(row.stay_id, &row.values).second) {
            throw IntegrityError("duplicate embedding for stay " + row.stay_id);
        }
    }
}

const std::vector<double>& EmbeddingIndex::of(const std::string& stay_id) const {
    const auto it = by_id_.find(stay_id);
    if (it == by_id_.end()) throw IntegrityError("no embedding for stay " + stay_id);
    return *it->second;
}

std::vector<double> centroid(const std::vector<const std::vector<double>*>& members) {
    if (members.empty()) throw ConfigError("centroid of an empty group");
    std::vector<double> mean(members[0]->size(), 0.0);
    for (const std::vector<double>* row : members) {
        if (row->size() != mean.size()) throw ShapeError("ragged embeddings in centroid");
        for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (*row)[i];
    }
    for (double& v : mean) v /= static_cast<double>(members.size());
    return mean;
}

DirectionResult direction_cosine(const GroupSpec& a, const GroupSpec& b, const GroupSpec& c,
                                 const GroupSpec& d, const EmbeddingIndex& embeddings) {
    DirectionResult result;
    result.entity_a = a.name + "/" + b.name;
    result.entity_b = c.name + "/" + d.name;

    const std::vector<double> ca = group_centroid(a, embeddings);
    const std::vector<double> cb = group_centroid(b, embeddings);
    const std::vector<double> cc = group_centroid(c, embeddings);
    const std::vector<double> cd = group_centroid(d, embeddings);

    result.v1.resize(ca.size());
    result.v2.resize(cc.size());
    for (std::size_t i = 0; i < ca.size(); ++i) result.v1[i] = cb[i] - ca[i];
    for (std::size_t i = 0; i < cc.size(); ++i) result.v2[i] = cd[i] - cc[i];

    const double n1 = norm(result.v1);
    const double n2 = norm(result.v2);
    if (n1 < kDegenerateNorm || n2 < kDegenerateNorm) {
        throw DegenerateDirectionError("degenerate direction for pair (" + result.entity_a +
                                       ", " + result.entity_b + "): norms " +
                                       format_double(n1) + ", " + format_double(n2));
    }
    result.cosine = dot(result.v1, result.v2) / (n1 * n2);
    result.n_a_state0 = a.members.size();
    result.n_a_state1 = b.members.size();
    result.n_b_state0 = c.members.size();
    result.n_b_state1 = d.members.size();
    return result;
}

CosineBaseline random_cosine_baseline(std::size_t dim, std::size_t n_samples,
                                      std::uint64_t seed) {
    if (dim < 2) throw ConfigError("random baseline needs dim >= 2");
    if (n_samples < 1000) throw ConfigError("random baseline needs n_samples >= 1000");

    Rng rng = Rng(seed).derive("cosine_baseline");
    std::vector<double> u(dim), v(dim);
    double sum = 0.0, sum_sq = 0.0;
    for (std::size_t s = 0; s < n_samples; ++s) {
        for (double& x : u) x = rng.normal();
        for (double& x : v) x = rng.normal();
        const double c = dot(u, v) / (norm(u) * norm(v));
        sum += c;
        sum_sq += c * c;
    }
    CosineBaseline baseline;
    baseline.mean = sum / static_cast<double>(n_samples);
    const double variance =
        sum_sq / static_cast<double>(n_samples) - baseline.mean * baseline.mean;
    baseline.stddev = std::sqrt(std::max(0.0, variance));
    return baseline;
}

std::vector<DirectionResult> concept_scan(const std::vector<std::string>& entity_tags,
                                          const std::pair<std::string, std::string>& modifier_pair,
                                          const Dataset& dataset,
                                          const EmbeddingIndex& embeddings,
                                          std::size_t min_size) {
    struct EntityGroups {
        std::string tag;
        GroupSpec state0;
        GroupSpec state1;
    };
    std::vector<EntityGroups> qualified;
    for (const std::string& entity : entity_tags) {
        GroupSpec g0 = resolve_group(dataset, entity + ":" + modifier_pair.first,
                                     {entity, entity + ":" + modifier_pair.first});
        GroupSpec g1 = resolve_group(dataset, entity + ":" + modifier_pair.second,
                                     {entity, entity + ":" + modifier_pair.second});
        if (g0.members.size() >= min_size && g1.members.size() >= min_size) {
            qualified.push_back({entity, std::move(g0), std::move(g1)});
        }
    }
    if (qualified.size() < 2) {
        throw ConfigError("concept scan needs at least 2 entities with both modifier groups of " +
                          std::to_string(min_size) + "+ stays, found " +
                          std::to_string(qualified.size()));
    }

    std::vector<DirectionResult> results;
    for (std::size_t i = 0; i < qualified.size(); ++i) {
        for (std::size_t j = i + 1; j < qualified.size(); ++j) {
            DirectionResult r = direction_cosine(qualified[i].state0, qualified[i].state1,
                                                 qualified[j].state0, qualified[j].state1,
                                                 embeddings);
            r.entity_a = qualified[i].tag;
            r.entity_b = qualified[j].tag;
            results.push_back(std::move(r));
        }
    }
    std::sort(results.begin(), results.end(), [](const DirectionResult& x,
                                                 const DirectionResult& y) {
        if (x.cosine != y.cosine) return x.cosine > y.cosine;
        if (x.entity_a != y.entity_a) return x.entity_a < y.entity_a;
        return x.entity_b < y.entity_b;
    });
    return results;
}

void write_scan_csv(const std::vector<DirectionResult>& results, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw IoError("cannot open " + path + " for writing");
    out << "entity_a,entity_b,cosine,n_a_state0,n_a_state1,n_b_state0,n_b_state1\n";
    for (const DirectionResult& r : results) {
        out << r.entity_a << "," << r.entity_b << "," << format_double(r.cosine) << ","
            << r.n_a_state0 << "," << r.n_a_state1 << "," << r.n_b_state0 << "," << r.n_b_state1
            << "\n";
    }
    if (!out) throw IoError("failed writing " + path);
}

std::vector<DirectionResult> read_scan_csv(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) ||
        line != "entity_a,entity_b,cosine,n_a_state0,n_a_state1,n_b_state0,n_b_state1") {
        throw ParseError(path + ": bad scan header");
    }
    std::vector<DirectionResult> results;
    std::size_t line_number = 1;
    while (std::getline(in, line)) {
        ++line_number;
        if (line.empty()) continue;
        const auto fields = split_csv_line(line);
        if (fields.size() != 7) {
            throw ParseError(path + " line " + std::to_string(line_number) + ": expected 7 fields");
        }
        const std::string context = path + " line " + std::to_string(line_number);
        DirectionResult r;
        r.entity_a = fields[0];
        r.entity_b = fields[1];
        r.cosine = parse_double(fields[2], context);
        r.n_a_state0 = static_cast<std::size_t>(parse_double(fields[3], context));
        r.n_a_state1 = static_cast<std::size_t>(parse_double(fields[4], context));
        r.n_b_state0 = static_cast<std::size_t>(parse_double(fields[5], context));
        r.n_b_state1 = static_cast<std::size_t>(parse_double(fields[6], context));
        results.push_back(std::move(r));
    }
    return results;
}

}  // namespace ehr::probe
