#!/usr/bin/env python3
"""Build a Countries S3 split from the world-countries dataset.

Usage: make_countries_s3.py path/to/countries.json out_dir [--seed 0]

countries.json is the file shipped by the `world-countries` npm package
(region, subregion, borders per country). The construction follows the
standard S1/S2/S3 recipe:

  * countries are split into train / valid / test; every valid and test
    country keeps at least one neighbour in train;
  * test and valid triples are locatedIn(country, region);
  * S1 removes those triples from train, S2 also removes
    locatedIn(country, subregion) for the held-out countries, S3 also
    removes locatedIn(neighbour, region) for every neighbour of a held-out
    country.

The answer to every test query is then only reachable through
neighborOf -> locatedIn(subregion) -> locatedIn(region).
"""

import argparse
import json
import pathlib
import random


def norm(name: str) -> str:
    return name.strip().lower().replace(" ", "_").replace("-", "_")


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("countries_json")
    ap.add_argument("out_dir")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--holdout", type=int, default=24)
    args = ap.parse_args()

    raw = json.loads(pathlib.Path(args.countries_json).read_text())
    countries = {}
    for c in raw:
        if not c.get("region") or not c.get("subregion"):
            continue
        countries[c["cca3"]] = {
            "name": norm(c["name"]["common"]),
            "region": norm(c["region"]),
            "subregion": norm(c["subregion"]),
            "borders": sorted(b for b in c.get("borders", [])),
        }
    places = {c["region"] for c in countries.values()} | {c["subregion"] for c in countries.values()}
    for code in countries:
        if countries[code]["name"] in places:
            countries[code]["name"] += "_country"
        countries[code]["borders"] = [b for b in countries[code]["borders"] if b in countries]

    rng = random.Random(args.seed)
    codes = sorted(countries)
    candidates = [c for c in codes if countries[c]["borders"]]
    rng.shuffle(candidates)

    held_out: list[str] = []
    held_set: set[str] = set()
    for code in candidates:
        if len(held_out) == 2 * args.holdout:
            break
        # Every held-out country must keep a neighbour in train.
        trial = held_set | {code}
        if any(
            all(n in trial for n in countries[h]["borders"]) for h in trial
        ):
            continue
        held_out.append(code)
        held_set.add(code)
    test = sorted(held_out[: args.holdout])
    valid = sorted(held_out[args.holdout :])

    blocked_region = set(held_set)
    for code in held_set:
        blocked_region.update(countries[code]["borders"])

    train_lines = []
    subregions = {}
    for code in codes:
        c = countries[code]
        subregions[c["subregion"]] = c["region"]
        for b in c["borders"]:
            train_lines.append((c["name"], "neighborOf", countries[b]["name"]))
        if code not in held_set:
            train_lines.append((c["name"], "locatedIn", c["subregion"]))
        if code not in blocked_region:
            train_lines.append((c["name"], "locatedIn", c["region"]))
    for sub, region in sorted(subregions.items()):
        train_lines.append((sub, "locatedIn", region))

    out = pathlib.Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)

    def dump(name, rows):
        with open(out / name, "w") as f:
            for h, r, t in rows:
                f.write(f"{h}\t{r}\t{t}\n")

    dump("train.txt", train_lines)
    dump("valid.txt", [(countries[c]["name"], "locatedIn", countries[c]["region"]) for c in valid])
    dump("test.txt", [(countries[c]["name"], "locatedIn", countries[c]["region"]) for c in test])

    ents = {h for h, _, t in train_lines} | {t for _, _, t in train_lines}
    print(f"train={len(train_lines)} valid={len(valid)} test={len(test)} entities={len(ents)}")


if __name__ == "__main__":
    main()
