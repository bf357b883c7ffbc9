#pragma once

#include <memory>
#include <random>

#include "simrec/simulator.hpp"

namespace testutil {

/// A tiny fully wired environment: a handful of items in two categories with
/// keyword profiles, hash embeddings, an untrained (but seeded) statistical
/// model, and a few seed histories.
struct MiniWorld {
    simrec::corpus::Catalog catalog;
    simrec::corpus::CategoryTable categories;
    simrec::distill::ProfileStore profiles;
    simrec::emb::EmbeddingStore embeddings;
    simrec::seq::SeqModel sta_model;
    std::map<std::string, simrec::corpus::UserHistory> histories;
    std::unique_ptr<simrec::sim::Environment> env;
};

inline std::unique_ptr<MiniWorld> make_mini_world(simrec::sim::EnvConfig config,
                                                  int n_items = 12, int n_users = 3) {
    using namespace simrec;
    auto world = std::make_unique<MiniWorld>();
    std::mt19937_64 rng(424242);

    std::vector<std::string> pro_pool = {"cozy", "fresh", "friendly", "bright", "spacious"};
    std::vector<std::string> con_pool = {"loud", "crowded", "pricey", "slow", "dim"};

    std::vector<corpus::RawItem> items;
    std::vector<distill::ItemProfile> profiles;
    for (int i = 0; i < n_items; ++i) {
        corpus::RawItem item;
        item.item_id = "m" + std::to_string(i);
        item.name = "Mini " + std::to_string(i);
        std::string cat = i % 3 == 2 ? "beta" : "alpha";
        item.raw_categories = {cat};
        world->categories.final_category[item.item_id] = cat;
        world->categories.vocabulary.insert(cat);

        distill::ItemProfile p;
        p.item_id = item.item_id;
        p.final_category = cat;
        p.pros.insert(pro_pool[rng() % pro_pool.size()]);
        p.pros.insert(pro_pool[rng() % pro_pool.size()]);
        p.cons.insert(con_pool[rng() % con_pool.size()]);
        profiles.push_back(std::move(p));
        items.push_back(std::move(item));
    }
    world->catalog = corpus::Catalog(items);

    emb::HashProvider provider(7, 16);
    emb::EmbeddingCache cache(16);
    std::vector<emb::ProfileEmbedding> embs;
    for (const auto& p : profiles) embs.push_back(emb::pool_profile(p, cache, provider));
    world->embeddings = emb::EmbeddingStore(std::move(embs));
    world->profiles = distill::ProfileStore(std::move(profiles));

    seq::SeqModelConfig sta_cfg;
    sta_cfg.dim = 8;
    sta_cfg.max_len = 8;
    sta_cfg.ffn_dim = 8;
    sta_cfg.seed = 11;
    std::vector<std::string> vocab;
    for (const auto& item : world->catalog.items()) vocab.push_back(item.item_id);
    world->sta_model = seq::SeqModel(sta_cfg, vocab);

    for (int u = 0; u < n_users; ++u) {
        std::string user = "user" + std::to_string(u);
        corpus::UserHistory hist;
        for (int k = 0; k < 4; ++k) {
            corpus::Interaction it;
            it.user_id = user;
            it.item_id = "m" + std::to_string((u * 3 + k) % n_items);
            it.label = k % 2;
            it.position = k;
            hist.push_back(it);
        }
        world->histories[user] = std::move(hist);
    }

    sim::Stores stores;
    stores.catalog = &world->catalog;
    stores.categories = &world->categories;
    stores.profiles = &world->profiles;
    stores.embeddings = &world->embeddings;
    stores.sta_model = &world->sta_model;
    world->env = std::make_unique<sim::Environment>(stores, world->histories, config);
    return world;
}

}  // namespace testutil
