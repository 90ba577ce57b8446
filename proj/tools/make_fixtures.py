#!/usr/bin/env python3
"""Regenerates the synthetic fixtures under data/.

Everything is seeded; running this twice produces byte-identical files.

    python3 tools/make_fixtures.py [--out data]
"""
import argparse
import json
import os
import random

# lemma, label, particle, irregular past forms
VERBS = [
    ("pursue", "pos", "", ""),
    ("achieve", "pos", "", ""),
    ("lead", "pos", "", "led"),
    ("build", "pos", "", "built"),
    ("defend", "pos", "", ""),
    ("organize", "pos", "", ""),
    ("launch", "pos", "", ""),
    ("rescue", "pos", "", ""),
    ("command", "pos", "", ""),
    ("create", "pos", "", ""),
    ("explore", "pos", "", ""),
    ("win", "pos", "", "won"),
    ("conquer", "pos", "", ""),
    ("decide", "pos", "on", ""),
    ("fight", "pos", "for", "fought"),
    ("visit", "equal", "", ""),
    ("watch", "equal", "", ""),
    ("meet", "equal", "", "met"),
    ("call", "equal", "", ""),
    ("walk", "equal", "to", ""),
    ("notice", "equal", "", ""),
    ("greet", "equal", "", ""),
    ("join", "equal", "", ""),
    ("follow", "equal", "", ""),
    ("listen", "equal", "to", ""),
    ("mention", "equal", "", ""),
    ("look", "equal", "at", ""),
    ("talk", "equal", "about", ""),
    ("tell", "equal", "", "told"),
    ("see", "equal", "", "saw,seen"),
    ("daydream", "neg", "about", ""),
    ("hesitate", "neg", "at", ""),
    ("worry", "neg", "about", ""),
    ("wait", "neg", "for", ""),
    ("obey", "neg", "", ""),
    ("struggle", "neg", "with", ""),
    ("fail", "neg", "at", ""),
    ("falter", "neg", "at", ""),
    ("cry", "neg", "about", ""),
    ("hide", "neg", "from", "hid,hidden"),
    ("beg", "neg", "for", ""),
    ("stumble", "neg", "into", ""),
    ("doubt", "neg", "", ""),
    ("wish", "neg", "for", ""),
    ("suffer", "neg", "through", ""),
]

FEMALE = ["sarah", "emma", "olivia", "maria", "anna", "julia", "lucy", "grace",
          "ella", "nora", "darla", "mey", "kate", "rose", "claire", "helen"]
MALE = ["william", "james", "david", "john", "peter", "henry", "jack", "sam",
        "paul", "mark", "tom", "george", "frank", "oscar", "leo", "ben"]
UNKNOWN = ["alex", "jordan", "casey", "robin"]

STORY_OBJECTS = [
    "the plan", "the trip", "the contest", "the project", "the party",
    "the exam", "the old house", "the new job", "the concert", "the garden",
    "the game", "the storm", "the city", "the station", "the school",
    "the store", "the team", "her brother", "his sister", "the band",
    "the race", "the market", "the museum", "the village", "the farm",
]
PARA_OBJECTS = [
    "the deal", "the boss", "the money", "the phone", "the police",
    "the truth", "the car", "the war", "the ship", "the doctor",
    "the letter", "the girl", "the boy", "the hotel", "the bridge",
]
PARA_SUBJECTS = ["he", "she", "they", "the man", "the woman", "my friend",
                 "the captain", "your father", "her mother"]
TIMES = ["", "", "", "yesterday", "after school", "on monday", "at night",
         "last week", "in the morning"]
PARA_TIMES = ["", "", "now", "today", "tonight", "again"]

GENDERED_WORDS = [
    ("waitress", "F"), ("actress", "F"), ("mother", "F"), ("queen", "F"),
    ("woman", "F"), ("girl", "F"), ("nurse", "F"), ("sister", "F"),
    ("doorman", "M"), ("waiter", "M"), ("father", "M"), ("king", "M"),
    ("man", "M"), ("boy", "M"), ("policeman", "M"), ("brother", "M"),
]

STOPWORDS = """a an the and or but if then so of to in on at by for with from
into onto about as is was were be been being am are do does did have has had
i me my mine we us our you your he him his she her hers it its they them
their this that these those there here not no yes very too just than
""".split()


def past(lemma, irregular):
    if irregular:
        return irregular.split(",")[0]
    if lemma.endswith("e"):
        return lemma + "d"
    if lemma.endswith("y") and lemma[-2] not in "aeiou":
        return lemma[:-1] + "ied"
    if lemma == "beg":
        return "begged"
    return lemma + "ed"


def present(lemma):
    if lemma.endswith(("s", "sh", "ch", "x", "z")):
        return lemma + "es"
    if lemma.endswith("y") and lemma[-2] not in "aeiou":
        return lemma[:-1] + "ies"
    return lemma + "s"


BY_LABEL = {lab: [v for v in VERBS if v[1] == lab] for lab in ("pos", "equal", "neg")}


def clause(rng, label, objects, tense="past"):
    lemma, _, particle, irregular = rng.choice(BY_LABEL[label])
    form = past(lemma, irregular) if tense == "past" else present(lemma)
    words = [form]
    if particle:
        words.append(particle)
    words.append(rng.choice(objects))
    return " ".join(words)


def story_sentence(rng, labels, name=None):
    name = name or rng.choice(FEMALE + MALE)
    clauses = [clause(rng, lab, STORY_OBJECTS) for lab in labels]
    if len(clauses) == 1:
        body = clauses[0]
    elif len(clauses) == 2:
        body = clauses[0] + " and " + clauses[1]
    else:
        body = ", ".join(clauses[:-1]) + " and " + clauses[-1]
    time = rng.choice(TIMES)
    text = name + " " + body
    return text + (" " + time if time else "")


def label_pattern(rng, weights):
    """Verb-label pattern for one story sentence: mostly one verb, some
    two or three with a clear majority, a few ineligible ones."""
    r = rng.random()
    main = rng.choices(["pos", "equal", "neg"], weights=weights)[0]
    if r < 0.70:
        return [main]
    if r < 0.82:
        return [main, main]
    if r < 0.90:
        other = rng.choice([l for l in ("pos", "equal", "neg") if l != main])
        pat = [main, main, other]
        rng.shuffle(pat)
        return pat
    if r < 0.94:
        other = rng.choice([l for l in ("pos", "equal", "neg") if l != main])
        return [main, other]            # tie -> indeterminable
    if r < 0.97:
        return [main] * 4               # too many verbs
    return []                           # no agency verb


def no_verb_sentence(rng):
    name = rng.choice(FEMALE + MALE)
    return f"{name} was happy with {rng.choice(STORY_OBJECTS)}"


def make_story(rng, n):
    out = []
    for _ in range(n):
        pat = label_pattern(rng, [36, 39, 25])
        out.append(no_verb_sentence(rng) if not pat else story_sentence(rng, pat))
    return out


def make_dev(rng, n):
    # eligible pos / neg sentences only; prompts flip their agency
    out = []
    while len(out) < n:
        lab = "pos" if len(out) % 2 == 0 else "neg"
        k = rng.choices([1, 2], weights=[80, 20])[0]
        out.append(story_sentence(rng, [lab] * k))
    return out


def make_paraphrases(rng, n):
    pairs = []
    labels = ("pos", "equal", "neg")
    for i in range(n):
        src_lab = labels[i % 3]
        tgt_lab = labels[(i // 3) % 3]
        subj = rng.choice(PARA_SUBJECTS)
        obj = rng.choice(PARA_OBJECTS)
        tense = rng.choice(["past", "present"])
        time = rng.choice(PARA_TIMES)

        def build(label):
            lemma, _, particle, irregular = rng.choice(BY_LABEL[label])
            form = past(lemma, irregular) if tense == "past" else present(lemma)
            words = [subj, form] + ([particle] if particle else []) + [obj]
            if time:
                words.append(time)
            return " ".join(words)

        pairs.append({"src": build(src_lab), "tgt": build(tgt_lab)})
    rng.shuffle(pairs)
    return pairs


def make_script(rng, idx):
    """One screenplay with a planted skew: female characters are narrated
    with low-agency verbs more often than male characters."""
    fem = rng.sample(FEMALE, 6)
    mal = rng.sample(MALE, 6)
    extra = [rng.choice(UNKNOWN), rng.choice(["the doorman", "the waitress"])]
    chars = [(n, "F") for n in fem] + [(n, "M") for n in mal] + [(n, "U") for n in extra]
    probs = {}
    for name, g in chars:
        if g == "F":
            p_pos = rng.uniform(0.05, 0.55)
        elif g == "M":
            p_pos = rng.uniform(0.30, 0.95)
        else:
            p_pos = rng.uniform(0.2, 0.6)
        rest = 1.0 - p_pos
        p_neg = rest * rng.uniform(0.45, 0.75) if g == "F" else rest * rng.uniform(0.25, 0.55)
        probs[name] = (p_pos, rest - p_neg, p_neg)
    # narration schedule: leads, supporting parts and walk-ons of either gender
    events = []
    for name, g in chars:
        if g == "U":
            n = rng.randint(3, 6)
        else:
            tier = rng.choices(["lead", "support", "minor"], weights=[25, 40, 35])[0]
            n = {"lead": (12, 18), "support": (5, 9), "minor": (1, 3)}[tier]
            n = rng.randint(*n)
        events += [name] * n
    rng.shuffle(events)

    lines = [f"TITLE: SYNTHETIC FEATURE {idx:02d}", ""]
    scene = 0
    for i, name in enumerate(events):
        if i % 6 == 0:
            scene += 1
            lines += [f"INT. {rng.choice(['KITCHEN', 'OFFICE', 'STATION', 'HOUSE'])} - "
                      f"{rng.choice(['DAY', 'NIGHT'])}", ""]
        p = probs[name]
        r = rng.random()
        k = 1 if r < 0.85 else 2
        lab = rng.choices(["pos", "equal", "neg"], weights=p)[0]
        if rng.random() < 0.15:
            sent = f"{name} was happy with {rng.choice(STORY_OBJECTS)}"
        else:
            sent = story_sentence(rng, [lab] * k, name=name)
        words = sent.split()
        if name.startswith("the "):
            words[0] = "The"
        else:
            words[0] = words[0].capitalize()
        narr = " ".join(words) + "."
        if rng.random() < 0.25:
            speaker = rng.choice(chars)[0]
            lines += [narr, "", " " * 20 + speaker.upper(),
                      " " * 10 + rng.choice(["We should go.", "I will wait here.",
                                             "Do not worry about it.", "Who called?"]),
                      ""]
        else:
            lines += [narr, ""]
    return "\n".join(lines) + "\n"


def write_jsonl(path, rows):
    with open(path, "w", encoding="utf-8") as f:
        for row in rows:
            f.write(json.dumps(row, sort_keys=True) + "\n")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=os.path.join(os.path.dirname(__file__), "..", "data"))
    args = ap.parse_args()
    out = os.path.abspath(args.out)
    os.makedirs(os.path.join(out, "scripts"), exist_ok=True)
    rng = random.Random(20201117)

    with open(os.path.join(out, "lexicon.tsv"), "w", encoding="utf-8") as f:
        f.write("# lemma\tlabel\tirregular forms (optional, comma separated)\n")
        for lemma, label, _, irregular in VERBS:
            f.write(f"{lemma}\t{label}" + (f"\t{irregular}" if irregular else "") + "\n")

    with open(os.path.join(out, "stopwords.txt"), "w", encoding="utf-8") as f:
        f.write("# stopwords v1\n")
        for w in STOPWORDS:
            f.write(w + "\n")

    with open(os.path.join(out, "names.tsv"), "w", encoding="utf-8") as f:
        for n in FEMALE:
            f.write(f"{n}\tF\n")
        for n in MALE:
            f.write(f"{n}\tM\n")
    with open(os.path.join(out, "gendered_words.tsv"), "w", encoding="utf-8") as f:
        for w, g in GENDERED_WORDS:
            f.write(f"{w}\t{g}\n")

    write_jsonl(os.path.join(out, "story.jsonl"), [{"text": s} for s in make_story(rng, 500)])
    write_jsonl(os.path.join(out, "story_dev.jsonl"), [{"text": s} for s in make_dev(rng, 200)])
    write_jsonl(os.path.join(out, "paraphrase.jsonl"), make_paraphrases(rng, 450))

    for i in range(10):
        with open(os.path.join(out, "scripts", f"script_{i:02d}.txt"), "w", encoding="utf-8") as f:
            f.write(make_script(rng, i))


if __name__ == "__main__":
    main()
