#!/usr/bin/env python3
"""Writes a small synthetic corpus in the ConvAI2 plain-text layout."""

import argparse
import random

# topic -> (personas, question, response templates keyed by persona index)
TOPICS = {
    "pets": (
        ["i have two cats .", "i have a big dog .", "i do not have any pets .", "i keep a small fish tank ."],
        ["do you have any pets ?", "what pets do you have ?"],
        ["yes , {p}", "{p} they keep me busy .", "well , {p}"],
    ),
    "job": (
        ["i work as a nurse .", "i am a truck driver .", "i teach math at a high school .", "i am a chef at a diner ."],
        ["what do you do for work ?", "what is your job ?"],
        ["{p} it is hard work .", "oh , {p}", "{p} what about you ?"],
    ),
    "food": (
        ["i love pizza .", "i am a vegetarian .", "i eat steak every friday .", "i hate spicy food ."],
        ["what is your favorite food ?", "do you like to cook ?"],
        ["{p} always have .", "hmm , {p}", "{p} and you ?"],
    ),
    "sport": (
        ["i like to ski in winter .", "i play soccer on weekends .", "i run marathons .", "i do not like sports ."],
        ["what do you do for fun ?", "do you play any sports ?"],
        ["{p} it keeps me fit .", "well , {p}", "{p} how about you ?"],
    ),
    "music": (
        ["i play the guitar .", "i love country music .", "i sing in a choir .", "i listen to jazz ."],
        ["what music do you like ?", "do you play an instrument ?"],
        ["{p} every day .", "oh , {p}", "{p} it relaxes me ."],
    ),
    "home": (
        ["i live in ohio .", "i live on a farm .", "i live in a big city .", "i live near the beach ."],
        ["where do you live ?", "where are you from ?"],
        ["{p} it is nice .", "{p} with my family .", "well , {p}"],
    ),
}

SMALL_TALK = [
    ("hi , how are you doing today ?", "i am good , thanks for asking ."),
    ("that sounds great .", "thanks , it really is ."),
    ("nice to meet you .", "nice to meet you too ."),
    ("it is raining here today .", "sorry to hear that ."),
    ("i just got back from the store .", "cool , anything good ?"),
]


def dialogue(rng):
    topics = rng.sample(sorted(TOPICS), 4)
    personas = [rng.choice(TOPICS[t][0]) for t in topics]
    partner = [rng.choice(TOPICS[t][0]) for t in rng.sample(sorted(TOPICS), 2)]
    turns = [rng.choice(SMALL_TALK)]
    for t, p in zip(topics[:3], personas[:3]):
        _, questions, responses = TOPICS[t]
        turns.append((rng.choice(questions), rng.choice(responses).format(p=p)))
        if rng.random() < 0.3:
            turns.append(rng.choice(SMALL_TALK))
    lines = [f"your persona: {p}" for p in personas]
    lines += [f"partner's persona: {p}" for p in partner]
    lines += [f"{q}\t{r}" for q, r in turns]
    return [f"{i + 1} {line}" for i, line in enumerate(lines)]


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dialogues", type=int, default=50)
    ap.add_argument("--seed", type=int, default=13)
    ap.add_argument("--out", default="data/convai2_fixture.txt")
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with open(args.out, "w") as f:
        for _ in range(args.dialogues):
            f.write("\n".join(dialogue(rng)) + "\n")


if __name__ == "__main__":
    main()
