"""Small generated graphs for experiments, benchmarks and tests."""

from __future__ import annotations

import numpy as np

from .graph import DatasetSplits, LabelMaps


def compositional_kg(
    num_countries: int = 8,
    cities_per_country: int = 3,
    num_professions: int = 8,
    people_per_city: int = 7,
    valid_fraction: float = 0.1,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> DatasetSplits:
    """People, cities, countries and professions with compositional relations.

    ``nationality`` is ``lives_in`` followed by ``located_in``, ``knows`` links
    people of one city, ``colleague_of`` people of one profession and city
    country, ``born_in`` usually repeats ``lives_in``. Held-out triples are
    therefore inferable from the training graph.
    """
    rng = np.random.default_rng(seed)
    labels = LabelMaps()
    triples: list[tuple[str, str, str]] = []

    countries = [f"country_{i}" for i in range(num_countries)]
    professions = [f"profession_{i}" for i in range(num_professions)]
    cities, city_country = [], {}
    for ci, country in enumerate(countries):
        for j in range(cities_per_country):
            city = f"city_{ci}_{j}"
            cities.append(city)
            city_country[city] = country
            triples.append((city, "located_in", country))
    for i, country in enumerate(countries):
        triples.append((country, "borders", countries[(i + 1) % num_countries]))

    people_by_city: dict[str, list[str]] = {c: [] for c in cities}
    prof_of: dict[str, str] = {}
    for city in cities:
        for j in range(people_per_city):
            person = f"person_{city[5:]}_{j}"
            people_by_city[city].append(person)
            country = city_country[city]
            prof = professions[int(rng.integers(num_professions))]
            prof_of[person] = prof
            triples.append((person, "lives_in", city))
            triples.append((person, "nationality", country))
            triples.append((person, "works_as", prof))
            born = city
            if rng.random() < 0.2:
                same = [c for c in cities if city_country[c] == country]
                born = same[int(rng.integers(len(same)))]
            triples.append((person, "born_in", born))

    for city, people in people_by_city.items():
        for a in people:
            others = [p for p in people if p != a]
            for b in rng.choice(others, size=min(4, len(others)), replace=False):
                triples.append((a, "knows", str(b)))
            peers = [p for c, ps in people_by_city.items() if city_country[c] == city_country[city]
                     for p in ps if p != a and prof_of[p] == prof_of[a]]
            if peers:
                triples.append((a, "colleague_of", peers[int(rng.integers(len(peers)))]))

    triples = list(dict.fromkeys(triples))
    # labels assigned in a fixed order so ids do not depend on the shuffle below
    for h, r, t in triples:
        labels.entity_id(h), labels.relation_id(r), labels.entity_id(t)
    ids = np.array([(labels.entities[h], labels.relations[r], labels.entities[t]) for h, r, t in triples], dtype=np.int64)
    order = rng.permutation(len(ids))
    n_test = int(round(test_fraction * len(ids)))
    n_valid = int(round(valid_fraction * len(ids)))
    test = ids[order[:n_test]]
    valid = ids[order[n_test:n_test + n_valid]]
    train = ids[order[n_test + n_valid:]]
    return DatasetSplits(train, valid, test, labels)


def random_graph_triples(num_nodes: int, num_edges: int, num_relations: int = 10, seed: int = 0) -> np.ndarray:
    """Uniform random multigraph over a spanning path, so it is connected."""
    rng = np.random.default_rng(seed)
    extra = max(num_edges - (num_nodes - 1), 0)
    perm = rng.permutation(num_nodes)
    path = np.stack([perm[:-1], rng.integers(0, num_relations, num_nodes - 1), perm[1:]], axis=1)
    rand = np.stack([rng.integers(0, num_nodes, extra), rng.integers(0, num_relations, extra),
                     rng.integers(0, num_nodes, extra)], axis=1)
    return np.concatenate([path, rand]).astype(np.int64)[:num_edges]


def write_triples(path, triples: np.ndarray, labels: LabelMaps | None = None) -> None:
    ent = labels.entity_labels() if labels else None
    rel = labels.relation_labels() if labels else None
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in np.asarray(triples).tolist():
            if labels:
                fh.write(f"{ent[h]}\t{rel[r]}\t{ent[t]}\n")
            else:
                fh.write(f"e{h}\tr{r}\te{t}\n")
