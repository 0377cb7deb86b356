#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "ehr/corpus.hpp"
#include "ehr/probe/probe.hpp"
#include "ehr/rng.hpp"

using namespace ehr;
using namespace ehr::probe;
using net::VisitEmbedding;

namespace {

Stay tagged_stay(const std::string& id, std::set<std::string> tags) {
    Stay s;
    s.stay_id = id;
    s.patient_id = "p_" + id;
    s.documents = {{"note"}};
    s.labels.assign(kNumLabels, 0);
    s.tags = std::move(tags);
    return s;
}

// Four single-member groups with embeddings chosen per-test; stay ids g0..g3.
struct ProbeFixture {
    Dataset dataset;
    std::vector<VisitEmbedding> rows;
    GroupSpec a, b, c, d;

    explicit ProbeFixture(std::vector<std::vector<double>> points) {
        const char* names[4] = {"g0", "g1", "g2", "g3"};
        for (int i = 0; i < 4; ++i) {
            dataset.stays.push_back(tagged_stay(names[i], {names[i]}));
            rows.push_back({names[i], points[static_cast<std::size_t>(i)]});
        }
        a = resolve_group(dataset, "a", {"g0"});
        b = resolve_group(dataset, "b", {"g1"});
        c = resolve_group(dataset, "c", {"g2"});
        d = resolve_group(dataset, "d", {"g3"});
    }
};

std::vector<double> householder(const std::vector<double>& x, const std::vector<double>& unit) {
    double proj = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) proj += x[i] * unit[i];
    std::vector<double> out(x.size());
    for (std::size_t i = 0; i < x.size(); ++i) out[i] = x[i] - 2.0 * proj * unit[i];
    return out;
}

}  // namespace

TEST_CASE("resolve_group matches stays carrying every required tag, in dataset order") {
    Dataset d;
    d.stays.push_back(tagged_stay("s1", {"organism:alpha", "organism:alpha:state1"}));
    d.stays.push_back(tagged_stay("s2", {"organism:alpha"}));
    d.stays.push_back(tagged_stay("s3", {"organism:beta", "organism:beta:state1"}));
    d.stays.push_back(tagged_stay("s4", {"organism:alpha", "organism:alpha:state1", "extra"}));

    GroupSpec g = resolve_group(d, "alpha1", {"organism:alpha", "organism:alpha:state1"});
    CHECK(g.name == "alpha1");
    CHECK(g.members == std::vector<std::string>{"s1", "s4"});

    GroupSpec all = resolve_group(d, "everyone", {});
    CHECK(all.members.size() == 4);

    GroupSpec none = resolve_group(d, "none", {"missing-tag"});
    CHECK(none.members.empty());
}

TEST_CASE("embedding index checks widths, duplicates and lookups") {
    std::vector<VisitEmbedding> rows = {{"s1", {1.0, 2.0}}, {"s2", {3.0, 4.0}}};
    EmbeddingIndex idx(rows);
    CHECK(idx.dim() == 2);
    CHECK(idx.of("s1") == std::vector<double>{1.0, 2.0});
    CHECK_THROWS_AS(idx.of("s9"), IntegrityError);

    std::vector<VisitEmbedding> ragged = {{"s1", {1.0, 2.0}}, {"s2", {3.0}}};
    CHECK_THROWS_AS(EmbeddingIndex{ragged}, ShapeError);

    std::vector<VisitEmbedding> dup = {{"s1", {1.0}}, {"s1", {2.0}}};
    CHECK_THROWS_AS(EmbeddingIndex{dup}, IntegrityError);
}

TEST_CASE("centroid is the coordinate-wise mean") {
    std::vector<double> p = {1.0, 0.0};
    std::vector<double> q = {0.0, 1.0};
    std::vector<double> r = {2.0, 2.0};
    CHECK(centroid({&p}) == p);

    std::vector<double> minus_p = {-1.0, -0.0};
    std::vector<double> zero = centroid({&p, &minus_p});
    CHECK(zero[0] == 0.0);
    CHECK(zero[1] == 0.0);

    std::vector<double> mean = centroid({&p, &q, &r});
    CHECK(mean == std::vector<double>{1.0, 1.0});

    CHECK_THROWS_AS(centroid({}), ConfigError);
}

TEST_CASE("direction cosine: parallel and orthogonal constructions") {
    // v1 = (1,0,0); v2 = (1,0,0) after identical displacement.
    ProbeFixture parallel({{0, 0, 0}, {1, 0, 0}, {5, 5, 5}, {6, 5, 5}});
    EmbeddingIndex idx(parallel.rows);
    DirectionResult r =
        direction_cosine(parallel.a, parallel.b, parallel.c, parallel.d, idx);
    CHECK(r.cosine == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(r.v1 == std::vector<double>{1.0, 0.0, 0.0});
    CHECK(r.v2 == std::vector<double>{1.0, 0.0, 0.0});
    CHECK(r.n_a_state0 == 1);
    CHECK(r.n_a_state1 == 1);
    CHECK(r.n_b_state0 == 1);
    CHECK(r.n_b_state1 == 1);

    // v1 = (1,0,0); v2 = (0,1,0).
    ProbeFixture ortho({{0, 0, 0}, {1, 0, 0}, {5, 5, 5}, {5, 6, 5}});
    EmbeddingIndex idx2(ortho.rows);
    DirectionResult r2 = direction_cosine(ortho.a, ortho.b, ortho.c, ortho.d, idx2);
    CHECK(std::fabs(r2.cosine) <= 1e-9);
}

TEST_CASE("degenerate difference vectors raise an error naming the pair") {
    ProbeFixture degen({{1, 1, 1}, {1, 1, 1}, {0, 0, 0}, {1, 0, 0}});
    degen.a.name = "east-sensitive";
    degen.b.name = "east-resistant";
    EmbeddingIndex idx(degen.rows);
    try {
        direction_cosine(degen.a, degen.b, degen.c, degen.d, idx);
        FAIL("expected DegenerateDirectionError");
    } catch (const DegenerateDirectionError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("east-sensitive") != std::string::npos);
        CHECK(msg.find("east-resistant") != std::string::npos);
    }
}

TEST_CASE("cosine is invariant under orthogonal maps, positive scaling and shifts") {
    Rng rng(7);
    const std::size_t dim = 12;
    auto random_point = [&]() {
        std::vector<double> v(dim);
        for (double& x : v) x = rng.normal();
        return v;
    };
    ProbeFixture base({random_point(), random_point(), random_point(), random_point()});
    EmbeddingIndex idx(base.rows);
    const double reference =
        direction_cosine(base.a, base.b, base.c, base.d, idx).cosine;
    CHECK(reference >= -1.0);
    CHECK(reference <= 1.0);

    // Householder reflection (orthogonal).
    std::vector<double> u = random_point();
    double un = 0.0;
    for (double x : u) un += x * x;
    un = std::sqrt(un);
    for (double& x : u) x /= un;
    std::vector<VisitEmbedding> reflected = base.rows;
    for (auto& row : reflected) row.values = householder(row.values, u);
    EmbeddingIndex refl_idx(reflected);
    const double after_reflection =
        direction_cosine(base.a, base.b, base.c, base.d, refl_idx).cosine;
    CHECK(std::fabs(after_reflection - reference) <= 1e-9);

    // Positive scaling.
    std::vector<VisitEmbedding> scaled = base.rows;
    for (auto& row : scaled) {
        for (double& x : row.values) x *= 3.7;
    }
    EmbeddingIndex scaled_idx(scaled);
    CHECK(std::fabs(direction_cosine(base.a, base.b, base.c, base.d, scaled_idx).cosine -
                    reference) <= 1e-9);

    // Common shift cancels in centroid differences.
    std::vector<double> shift = random_point();
    std::vector<VisitEmbedding> shifted = base.rows;
    for (auto& row : shifted) {
        for (std::size_t i = 0; i < dim; ++i) row.values[i] += shift[i];
    }
    EmbeddingIndex shifted_idx(shifted);
    CHECK(std::fabs(direction_cosine(base.a, base.b, base.c, base.d, shifted_idx).cosine -
                    reference) <= 1e-9);

    // Swapping both pairs preserves the cosine; swapping one negates it.
    CHECK(direction_cosine(base.b, base.a, base.d, base.c, idx).cosine ==
          doctest::Approx(reference).epsilon(1e-12));
    CHECK(direction_cosine(base.b, base.a, base.c, base.d, idx).cosine ==
          doctest::Approx(-reference).epsilon(1e-12));
    CHECK(direction_cosine(base.a, base.b, base.d, base.c, idx).cosine ==
          doctest::Approx(-reference).epsilon(1e-12));
}

TEST_CASE("random cosine baseline concentrates at 1/sqrt(dim)") {
    CosineBaseline b448 = random_cosine_baseline(448, 20000, 5);
    CHECK(std::fabs(b448.mean) < 0.005);
    CHECK(std::fabs(b448.stddev - 0.0473) <= 0.005);
    // Convergence to the analytic value within 3 Monte-Carlo standard errors.
    const double se = b448.stddev / std::sqrt(2.0 * 20000.0);
    CHECK(std::fabs(b448.stddev - 1.0 / std::sqrt(448.0)) <= 3.0 * se);

    CosineBaseline again = random_cosine_baseline(448, 20000, 5);
    CHECK(again.mean == b448.mean);
    CHECK(again.stddev == b448.stddev);

    CosineBaseline b2 = random_cosine_baseline(2, 20000, 6);
    CHECK(std::fabs(b2.stddev - 1.0 / std::sqrt(2.0)) <= 0.02);

    CHECK_THROWS_AS(random_cosine_baseline(1, 20000, 5), ConfigError);
    CHECK_THROWS_AS(random_cosine_baseline(448, 999, 5), ConfigError);
}

TEST_CASE("concept scan finds a planted shared direction") {
    // Three entities; state1 shifts every entity by the same delta, so all
    // pairwise modifier-direction cosines are exactly 1 before noise.
    Rng rng(11);
    const std::size_t dim = 16;
    std::vector<double> delta(dim);
    for (double& x : delta) x = rng.normal();

    Dataset d;
    std::vector<VisitEmbedding> rows;
    const char* entities[3] = {"organism:alpha", "organism:beta", "organism:gamma"};
    int counter = 0;
    for (const char* entity : entities) {
        std::vector<double> entity_base(dim);
        for (double& x : entity_base) x = 4.0 * rng.normal();
        for (int state = 0; state < 2; ++state) {
            for (int member = 0; member < 3; ++member) {
                const std::string id = "s" + std::to_string(counter++);
                const std::string state_tag =
                    std::string(entity) + (state == 0 ? ":state0" : ":state1");
                d.stays.push_back(tagged_stay(id, {entity, state_tag}));
                std::vector<double> v = entity_base;
                for (std::size_t i = 0; i < dim; ++i) {
                    v[i] += state * delta[i] + 1e-4 * rng.normal();
                }
                rows.push_back({id, v});
            }
        }
    }
    EmbeddingIndex idx(rows);
    std::vector<std::string> tags = {entities[0], entities[1], entities[2]};
    std::vector<DirectionResult> scan =
        concept_scan(tags, {"state0", "state1"}, d, idx, 3);
    REQUIRE(scan.size() == 3);  // three unordered pairs
    for (const DirectionResult& r : scan) {
        CHECK(r.cosine >= 0.99);
        CHECK(r.n_a_state0 == 3);
        CHECK(r.n_a_state1 == 3);
        CHECK(r.n_b_state0 == 3);
        CHECK(r.n_b_state1 == 3);
    }
    // Sorted by cosine descending, names break ties.
    for (std::size_t i = 1; i < scan.size(); ++i) {
        CHECK(scan[i - 1].cosine >= scan[i].cosine);
    }

    // A higher min_size disqualifies every entity.
    CHECK_THROWS_AS(concept_scan(tags, {"state0", "state1"}, d, idx, 4), ConfigError);

    // With only one qualifying entity the scan refuses to run.
    std::vector<std::string> one = {entities[0], "organism:missing"};
    CHECK_THROWS_AS(concept_scan(one, {"state0", "state1"}, d, idx, 3), ConfigError);
}

TEST_CASE("independent random offsets stay inside the 5-sigma baseline band") {
    Rng rng(13);
    const std::size_t dim = 448;
    Dataset d;
    std::vector<VisitEmbedding> rows;
    std::vector<std::string> tags;
    for (int e = 0; e < 30; ++e) {
        const std::string entity = "bug:" + std::to_string(e);
        tags.push_back(entity);
        std::vector<double> base(dim), offset(dim);
        for (double& x : base) x = rng.normal();
        for (double& x : offset) x = rng.normal();
        for (int state = 0; state < 2; ++state) {
            const std::string id = entity + ":s" + std::to_string(state);
            d.stays.push_back(
                tagged_stay(id, {entity, entity + (state == 0 ? ":state0" : ":state1")}));
            std::vector<double> v = base;
            if (state == 1) {
                for (std::size_t i = 0; i < dim; ++i) v[i] += offset[i];
            }
            rows.push_back({id, v});
        }
    }
    EmbeddingIndex idx(rows);
    std::vector<DirectionResult> scan = concept_scan(tags, {"state0", "state1"}, d, idx, 1);
    REQUIRE(scan.size() == 435);  // C(30, 2)

    const double bound = 5.0 * 0.0473;
    std::size_t inside = 0;
    for (const DirectionResult& r : scan) inside += std::fabs(r.cosine) < bound;
    INFO("pairs inside the band: ", inside, " of ", scan.size());
    CHECK(static_cast<double>(inside) >= 0.99 * static_cast<double>(scan.size()));
}

TEST_CASE("scan CSV round-trips exactly") {
    std::vector<DirectionResult> results(2);
    results[0].entity_a = "organism:alpha";
    results[0].entity_b = "organism:beta";
    results[0].cosine = 0.1 + 0.2;
    results[0].n_a_state0 = 25;
    results[0].n_a_state1 = 30;
    results[0].n_b_state0 = 40;
    results[0].n_b_state1 = 26;
    results[1].entity_a = "organism:alpha";
    results[1].entity_b = "organism:gamma";
    results[1].cosine = -0.125;
    results[1].n_a_state0 = 25;
    results[1].n_a_state1 = 30;
    results[1].n_b_state0 = 27;
    results[1].n_b_state1 = 31;

    const std::string path = "probe_test_scan.csv";
    write_scan_csv(results, path);
    std::vector<DirectionResult> back = read_scan_csv(path);
    REQUIRE(back.size() == 2);
    for (std::size_t i = 0; i < 2; ++i) {
        CHECK(back[i].entity_a == results[i].entity_a);
        CHECK(back[i].entity_b == results[i].entity_b);
        CHECK(back[i].cosine == results[i].cosine);
        CHECK(back[i].n_a_state0 == results[i].n_a_state0);
        CHECK(back[i].n_a_state1 == results[i].n_a_state1);
        CHECK(back[i].n_b_state0 == results[i].n_b_state0);
        CHECK(back[i].n_b_state1 == results[i].n_b_state1);
    }
    std::remove(path.c_str());
    CHECK_THROWS_AS(read_scan_csv("no_such_scan.csv"), IoError);
}
