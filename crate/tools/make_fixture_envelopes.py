#!/usr/bin/env python3
"""Wrap the payload fixtures into envelope NDJSON and HAR captures.

Run from the repository root:  python3 tools/make_fixture_envelopes.py
"""
import json
import pathlib

FIX = pathlib.Path(__file__).resolve().parent.parent / "fixtures"
HOST = "https://i.example-api.test"


def body(name):
    return (FIX / name).read_text(encoding="utf-8")


def envelope(eid, url, captured_at, text, status=200, method="GET"):
    return {
        "envelope_id": eid,
        "source_url": url,
        "method": method,
        "status": status,
        "captured_at": captured_at,
        "session_id": None,
        "body": text,
    }


def write_ndjson(name, envelopes):
    with open(FIX / name, "w", encoding="utf-8", newline="\n") as fh:
        for env in envelopes:
            fh.write(json.dumps(env, ensure_ascii=False) + "\n")


reels = envelope("env-reels-0001", HOST + "/api/v1/feed/reels_media/?reel_ids=5550001&reel_ids=5550002&reel_ids=5550003",
                 1717228000, body("fx_reels_3users.json"))
video = envelope("env-video-0001", HOST + "/api/v1/feed/reels_media/?reel_ids=5550004", 1717231000, body("fx_video_item.json"))
highlight = envelope("env-highlight-0001", HOST + "/api/v1/highlights/5550001/highlights_tray/", 1717232000,
                     body("fx_highlight_tray.json"))
tray = envelope("env-tray-0001", HOST + "/api/v1/feed/reels_tray/", 1717227000, body("fx_tray.json"))
unrelated = envelope("env-other-0001", HOST + "/api/v1/accounts/current_user/", 1717227500,
                     '{"user": {"pk": "1", "username": "research_account"}}')

write_ndjson("fx_reels_3users.ndjson", [reels])
write_ndjson("fx_stream.ndjson", [tray, unrelated, reels, video, highlight])

with open(FIX / "fx_mixed_lines.ndjson", "w", encoding="utf-8", newline="\n") as fh:
    fh.write(json.dumps(tray, ensure_ascii=False) + "\n")
    fh.write('{"envelope_id": "env-broken", "source_url": \n')
    fh.write(json.dumps(video, ensure_ascii=False) + "\n")

har = {
    "log": {
        "version": "1.2",
        "creator": {"name": "fixture-writer", "version": "1"},
        "entries": [
            {
                "startedDateTime": "2024-06-01T07:46:40.000Z",
                "time": 120.0,
                "request": {"method": "GET", "url": reels["source_url"], "httpVersion": "HTTP/1.1",
                            "headers": [], "queryString": [], "cookies": [], "headersSize": -1, "bodySize": 0},
                "response": {"status": 200, "statusText": "OK", "httpVersion": "HTTP/1.1", "headers": [], "cookies": [],
                             "content": {"size": len(reels["body"].encode()), "mimeType": "application/json",
                                         "text": reels["body"]},
                             "redirectURL": "", "headersSize": -1, "bodySize": -1},
                "cache": {}, "timings": {"send": 0, "wait": 100, "receive": 20},
            },
            {
                "startedDateTime": "2024-06-01T07:46:41.000Z",
                "time": 15.0,
                "request": {"method": "POST", "url": HOST + "/api/v1/feed/reels_media/seen/", "httpVersion": "HTTP/1.1",
                            "headers": [], "queryString": [], "cookies": [], "headersSize": -1, "bodySize": 0},
                "response": {"status": 204, "statusText": "No Content", "httpVersion": "HTTP/1.1", "headers": [],
                             "cookies": [], "content": {"size": 0, "mimeType": "x-unknown"},
                             "redirectURL": "", "headersSize": -1, "bodySize": 0},
                "cache": {}, "timings": {"send": 0, "wait": 10, "receive": 5},
            },
            {
                "startedDateTime": "2024-06-01T07:46:42.000Z",
                "time": 30.0,
                "request": {"method": "GET", "url": unrelated["source_url"], "httpVersion": "HTTP/1.1",
                            "headers": [], "queryString": [], "cookies": [], "headersSize": -1, "bodySize": 0},
                "response": {"status": 200, "statusText": "OK", "httpVersion": "HTTP/1.1", "headers": [], "cookies": [],
                             "content": {"size": len(unrelated["body"]), "mimeType": "application/json",
                                         "text": unrelated["body"]},
                             "redirectURL": "", "headersSize": -1, "bodySize": -1},
                "cache": {}, "timings": {"send": 0, "wait": 20, "receive": 10},
            },
        ],
    }
}
with open(FIX / "fx_reels_3users.har", "w", encoding="utf-8", newline="\n") as fh:
    json.dump(har, fh, ensure_ascii=False, indent=1)
    fh.write("\n")
