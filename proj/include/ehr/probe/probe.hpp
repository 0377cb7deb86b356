#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <utility>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/net/hybridnet.hpp"

namespace ehr::probe {

// A tag-defined stay group: a stay belongs iff it carries every required tag.
struct GroupSpec {
    std::string name;
    std::set<std::string> required_tags;
    std::vector<std::string> members;  // resolved stay ids, dataset order
};

GroupSpec resolve_group(const Dataset& dataset, std::string name,
                        std::set<std::string> required_tags);

struct DirectionResult {
    std::string entity_a;
    std::string entity_b;
    std::vector<double> v1;  // centroid(B) - centroid(A)
    std::vector<double> v2;  // centroid(D) - centroid(C)
    double cosine = 0.0;
    std::size_t n_a_state0 = 0;
    std::size_t n_a_state1 = 0;
    std::size_t n_b_state0 = 0;
    std::size_t n_b_state1 = 0;
};

// stay_id -> embedding lookup built from an embeddings table.
class EmbeddingIndex {
public:
    explicit EmbeddingIndex(const std::vector<net::VisitEmbedding>& rows);

    const std::vector<double>& of(const std::string& stay_id) const;  // throws IntegrityError
    std::size_t dim() const { return dim_; }

private:
    std::map<std::string, const std::vector<double>*> by_id_;
    std::size_t dim_ = 0;
};

// Coordinate-wise mean of the group members' embeddings.
std::vector<double> centroid(const std::vector<const std::vector<double>*>& members);

// v1 = centroid(b) - centroid(a), v2 = centroid(d) - centroid(c); throws a
// DegenerateDirectionError naming the pair when either norm < 1e-12.
inline constexpr double kDegenerateNorm = 1e-12;

DirectionResult direction_cosine(const GroupSpec& a, const GroupSpec& b, const GroupSpec& c,
                                 const GroupSpec& d, const EmbeddingIndex& embeddings);

// Monte-Carlo cosine of independent standard-normal vector pairs.
struct CosineBaseline {
    double mean = 0.0;
    double stddev = 0.0;
};

CosineBaseline random_cosine_baseline(std::size_t dim, std::size_t n_samples, std::uint64_t seed);

// For every unordered pair of qualifying entities (both modifier groups have
// at least min_size members), the cosine between their modifier-difference
// vectors, sorted by cosine descending. Entity groups are the stays tagged
// `entity` and `entity:state`.
std::vector<DirectionResult> concept_scan(const std::vector<std::string>& entity_tags,
                                          const std::pair<std::string, std::string>& modifier_pair,
                                          const Dataset& dataset,
                                          const EmbeddingIndex& embeddings,
                                          std::size_t min_size = 25);

void write_scan_csv(const std::vector<DirectionResult>& results, const std::string& path);
std::vector<DirectionResult> read_scan_csv(const std::string& path);

}  // namespace ehr::probe
