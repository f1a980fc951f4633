#!/usr/bin/env python3
"""Count items and stickers in the payload fixtures, independently of the Rust parser.

The numbers printed here are the frozen expectations used by the test suites.
"""
import json
import pathlib
from collections import Counter

FIX = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
KNOWN = {
    "story_polls": "poll", "story_questions": "question", "reel_mentions": "mention",
    "story_hashtags": "hashtag", "story_link_stickers": "link", "story_locations": "location",
    "story_sliders": "slider", "story_countdowns": "countdown", "story_music_stickers": "music",
}


def items_of(doc):
    for reel in doc.get("reels_media", []):
        yield from reel["items"]
    for hl in doc.get("highlights", []):
        yield from hl["items"]


def sticker_counts(items):
    c = Counter()
    for it in items:
        for key, val in it.items():
            if isinstance(val, list) and (key.startswith("story_") or key == "reel_mentions"):
                c[KNOWN.get(key, "unknown")] += len(val)
    return c


all_ids = set()
for name in ["fx_reels_3users.json", "fx_video_item.json", "fx_highlight_tray.json"]:
    doc = json.loads((FIX / name).read_text())
    items = list(items_of(doc))
    ids = [str(i["pk"]) for i in items]
    all_ids.update(ids)
    print(name, "items", len(items), dict(sorted(sticker_counts(items).items())))
    for it in items:
        kind = "video" if it["media_type"] == 2 else "image"
        polls = [p["poll_sticker"] for p in it.get("story_polls", [])]
        print("   ", it["pk"], kind, it.get("video_duration", 0),
              [(p["question"], [t["text"] for t in p["tallies"]]) for p in polls])

tray = json.loads((FIX / "fx_tray.json").read_text())
print("fx_tray.json entries", len(tray["tray"]),
      "without_hint", sum(1 for t in tray["tray"] if "media_count" not in t))
print("distinct item ids across stream", len(all_ids))
usernames = set()
for name in ["fx_reels_3users.json", "fx_video_item.json", "fx_highlight_tray.json"]:
    doc = json.loads((FIX / name).read_text())
    for reel in doc.get("reels_media", []) + doc.get("highlights", []):
        usernames.add(reel["user"]["username"])
    for it in items_of(doc):
        for m in it.get("reel_mentions", []):
            usernames.add(m["user"]["username"])
print("usernames", sorted(usernames))
