"""Templated corpora and synthetic market data for tests and experiments."""

from __future__ import annotations

import random
import string
from datetime import date, datetime, time, timedelta, timezone

from .corpus import Article, EventType, LabeledArticle

COMPANIES = [
    ("Arbor Dynamics", "ARBD"), ("Bluefin Therapeutics", "BLFN"), ("Cobalt Ridge", "CBRG"),
    ("Delta Harbor", "DLHB"), ("Evergreen Labs", "EVGL"), ("Falcon Circuits", "FLCN"),
    ("Granite Peak", "GRPK"), ("Helix Biosciences", "HLXB"), ("Ironwood Systems", "IRWD"),
    ("Juniper Freight", "JNPF"), ("Kestrel Energy", "KSTE"), ("Lumen Orchard", "LMOR"),
    ("Meridian Foods", "MRDF"), ("Northgate Mining", "NGMN"), ("Orion Castings", "ORCS"),
    ("Pinnacle Optics", "PNOP"), ("Quartz Logistics", "QZLG"), ("Redwood Pharma", "RDWP"),
    ("Sable Networks", "SBLN"), ("Tidewater Robotics", "TDWR"), ("Umbra Security", "UMBS"),
    ("Vantage Aerospace", "VNTA"), ("Willow Creek Bank", "WLCB"), ("Xenon Materials", "XNMT"),
    ("Yellowstone Motors", "YLSM"), ("Zephyr Software", "ZPHS"), ("Atlas Grain", "ATGR"),
    ("Beacon Health", "BCNH"), ("Crescent Water", "CRWT"), ("Dune Semiconductor", "DUNS"),
    ("Ember Retail", "EMBR"), ("Fjord Shipping", "FJRD"), ("Glacier Media", "GLCM"),
    ("Horizon Clinics", "HRZC"), ("Indigo Textiles", "INDT"), ("Jasper Mobility", "JSPM"),
    ("Keystone Brewing", "KSBR"), ("Lattice Quantum", "LTQM"), ("Mosaic Insurance", "MSCI"),
    ("Nimbus Cloud", "NMBC"),
]

# (title template, body trigger templates); {c} company, {t} target, {m} amount
TRIGGERS: dict[EventType, list[str]] = {
    EventType.SR: [
        "board of directors authorized a new stock repurchase program of up to {m} million",
        "announced a share buyback program of {m} million dollars",
        "approved an increase to its stock repurchase authorization by {m} million",
    ],
    EventType.A: [
        "entered into a definitive agreement to acquire {t} for {m} million",
        "agreed to acquire all outstanding shares of {t}",
        "will acquire {t} in a cash transaction valued at {m} million",
    ],
    EventType.NC: [
        "was awarded a new contract worth {m} million",
        "has been selected for a multi-year supply contract valued at {m} million",
        "won a contract award of {m} million from a federal agency",
    ],
    EventType.DI: [
        "raised its quarterly dividend by {p} percent",
        "increased the regular quarterly cash dividend to {d} per share",
        "declared a higher quarterly dividend of {d} per share, up from the prior payment",
    ],
    EventType.SS: [
        "approved a {r}-for-1 forward stock split of its common shares",
        "announced a {r}-for-one split of its outstanding stock",
    ],
    EventType.RSS: [
        "will effect a 1-for-{r} reverse stock split of its common stock",
        "approved a reverse split at a ratio of one-for-{r}",
    ],
    EventType.DC: [
        "suspended its quarterly dividend to preserve liquidity",
        "reduced its quarterly dividend to {d} per share",
    ],
    EventType.CT: [
        "received FDA approval for its lead therapy",
        "reported positive topline results from its phase 3 clinical trial",
    ],
    EventType.GI: [
        "raised its full-year revenue guidance above prior estimates",
        "increased its earnings outlook for the fiscal year",
    ],
    EventType.SD: [
        "declared a special one-time cash dividend of {d} per share",
    ],
    EventType.RD: [
        "declared a regular quarterly dividend of {d} per share",
    ],
}

# near misses: same vocabulary, no tradable event
DISTRACTORS: dict[EventType, list[str]] = {
    EventType.SR: [
        "announced the completion of the recently announced stock repurchase program",
        "completed its previously announced share buyback and has no remaining authorization",
    ],
    EventType.A: [
        "completed the previously announced acquisition of {t} earlier this year",
        "said the acquisition of {t} announced last year has closed as expected",
    ],
    EventType.NC: [
        "said its existing contract with the agency expired at the end of the quarter",
        "completed delivery under a contract signed two years ago",
    ],
    EventType.DI: [
        "reminded shareholders of the record date for its dividend declared last month",
        "paid the dividend previously declared in the prior quarter",
    ],
}

TITLES: dict[EventType, list[str]] = {
    EventType.SR: ["{c} Announces Share Repurchase", "{c} Board Approves Buyback"],
    EventType.A: ["{c} to Acquire {t}", "{c} Announces Agreement with {t}"],
    EventType.NC: ["{c} Awarded New Contract", "{c} Wins Contract"],
    EventType.DI: ["{c} Raises Dividend", "{c} Increases Quarterly Dividend"],
}

FILLER = [
    "The company is headquartered in Denver and employs about {n} people.",
    "Forward-looking statements in this release involve risks and uncertainties.",
    "Management will host a conference call on Thursday at 8:30 a.m. Eastern Time.",
    "{c} serves customers in more than {n} countries.",
    "Investors can find additional information on the company website.",
    "The chief executive officer said the team remains focused on execution.",
    "Results for the second quarter will be reported next month.",
    "The company continues to invest in research and product development.",
]

DISTRACTOR_TITLES: dict[EventType, list[str]] = {
    EventType.SR: ["{c} Completes Share Repurchase Program"],
    EventType.A: ["{c} Completes Acquisition of {t}"],
    EventType.NC: ["{c} Provides Contract Update"],
    EventType.DI: ["{c} Issues Dividend Reminder"],
}

NEUTRAL_TITLES = [
    "{c} to Present at Investor Conference",
    "{c} Appoints New Chief Financial Officer",
    "{c} Reports Quarterly Operating Update",
    "{c} Opens New Regional Office",
]


def _fill(template: str, rng: random.Random, company: str, target: str) -> str:
    return template.format(
        c=company,
        t=target,
        m=rng.choice([25, 50, 75, 100, 150, 250, 500]),
        p=rng.choice([5, 8, 10, 12, 15]),
        d=f"${rng.choice([0.12, 0.25, 0.40, 0.55, 0.80]):.2f}",
        r=rng.choice([2, 3, 4, 5, 10, 20]),
        n=rng.choice([12, 40, 300, 1200, 5000]),
    )


def _trigger_spans(template: str, rng: random.Random, company: str, target: str) -> tuple[str, list[tuple[int, int]]]:
    """Fill a trigger template and return the offsets of its literal wording.

    Slot values (targets, amounts, ratios) are left outside the spans since
    they are shared across event types and carry no event signal.
    """
    text, spans = "", []
    for literal, field, _, _ in string.Formatter().parse(template):
        stripped = literal.strip()
        if stripped:
            lead = len(literal) - len(literal.lstrip())
            spans.append((len(text) + lead, len(text) + lead + len(stripped)))
        text += literal
        if field is not None:
            text += _fill("{" + field + "}", rng, company, target)
    return text, spans


def _timestamp(rng: random.Random, base: datetime, days: int = 60) -> datetime:
    return base + timedelta(days=rng.randrange(days), minutes=rng.randrange(24 * 60))


def _assemble(idx: int, title: str, parts: list[tuple[str, EventType | None]], ts: datetime,
              ticker: str | None) -> LabeledArticle:
    """Join sentence parts into body text, recording spans for the labeled ones."""
    offset = len(title) + 1
    text, spans = "", []
    for part, ev in parts:
        if text:
            text += " "
        if ev is not None:
            start = offset + len(text)
            spans.append((start, start + len(part), ev))
        text += part
    return LabeledArticle(Article(f"a{idx:05d}", title, text, ts, ticker), tuple(spans))


def templated_corpus(
    n_event: int,
    n_distractor: int,
    events: tuple[EventType, ...] = (EventType.SR, EventType.A, EventType.NC, EventType.DI),
    seed: int = 0,
    base: datetime = datetime(2020, 3, 2, tzinfo=timezone.utc),
) -> list[LabeledArticle]:
    """Event articles with annotated trigger sentences plus unlabeled near misses.

    Distractors reuse event vocabulary (e.g. completion of an earlier buyback)
    and carry no labels. Every article also carries its gold ticker.
    """
    rng = random.Random(seed)
    out: list[LabeledArticle] = []
    kinds = [("event", rng.choice(events)) for _ in range(n_event)]
    kinds += [("distractor", rng.choice([e for e in events if e in DISTRACTORS] or list(DISTRACTORS)))
              for _ in range(n_distractor)]
    rng.shuffle(kinds)
    for idx, (kind, ev) in enumerate(kinds):
        company, ticker = rng.choice(COMPANIES)
        target = rng.choice([c for c, _ in COMPANIES if c != company])
        filler = [_fill(f, rng, company, target) for f in rng.sample(FILLER, 3)]
        if kind == "event":
            title = _fill(rng.choice(TITLES.get(ev, ["{c} Issues Announcement"])), rng, company, target)
            phrase, pieces = _trigger_spans(rng.choice(TRIGGERS[ev]), rng, company, target)
            parts = [(filler[0], None), (f"{company} {phrase}.", None), (filler[1], None), (filler[2], None)]
            la = _assemble(idx, title, parts, _timestamp(rng, base), ticker)
            # spans cover the trigger wording only, not the company, slot values or full stop
            start = la.article.full_text.index(f"{company} {phrase}.") + len(company) + 1
            spans = tuple((start + a, start + b, ev) for a, b in pieces)
            out.append(LabeledArticle(la.article, spans))
        else:
            pool = DISTRACTOR_TITLES[ev] if rng.random() < 0.5 else NEUTRAL_TITLES
            title = _fill(rng.choice(pool), rng, company, target)
            near = f"{company} {_fill(rng.choice(DISTRACTORS[ev]), rng, company, target)}."
            parts = [(filler[0], None), (near, None), (filler[1], None), (filler[2], None)]
            out.append(_assemble(idx, title, parts, _timestamp(rng, base), ticker))
    return out


def ticker_articles(n: int, seed: int = 0, companies=COMPANIES) -> list[Article]:
    """Articles each built around one company (gold ticker set), with a decoy mention."""
    rng = random.Random(seed)
    out = []
    for i in range(n):
        company, ticker = rng.choice(companies)
        decoy = rng.choice([c for c, _ in companies if c != company])
        title = _fill(rng.choice(NEUTRAL_TITLES + [t for ts in TITLES.values() for t in ts]), rng, company, decoy)
        body = [
            f"{company} (NASDAQ: {ticker}) today announced an update to its operations.",
            _fill(rng.choice(FILLER), rng, company, decoy),
            f"Shares of {company} traded higher after the announcement.",
            f"The company previously partnered with {decoy} on a pilot program.",
        ]
        rng.shuffle(body)
        out.append(Article(f"t{i:05d}", title, " ".join(body), _timestamp(rng, datetime(2020, 3, 2, tzinfo=timezone.utc)), ticker))
    return out


# ----------------------------------------------------------------------------
# market data
# ----------------------------------------------------------------------------

# US equities in UTC during EST: pre 09:00, regular 14:30-21:00, after until 01:00 next day
SESSION_UTC = (time(9, 0), time(14, 30), time(21, 0), time(1, 0))


def weekday_calendar_rows(start: date, n_days: int, holidays: frozenset[date] = frozenset()) -> list[tuple]:
    """Calendar rows ``(date, pre_open, reg_open, reg_close, after_close)`` in UTC."""
    rows, d = [], start
    while len(rows) < n_days:
        if d.weekday() < 5 and d not in holidays:
            pre = datetime.combine(d, SESSION_UTC[0], timezone.utc)
            reg_o = datetime.combine(d, SESSION_UTC[1], timezone.utc)
            reg_c = datetime.combine(d, SESSION_UTC[2], timezone.utc)
            after = datetime.combine(d + timedelta(days=1), SESSION_UTC[3], timezone.utc)
            rows.append((d, pre, reg_o, reg_c, after))
        d += timedelta(days=1)
    return rows


def random_walk_bars(
    ticker: str,
    calendar_rows: list[tuple],
    rng: random.Random,
    start_price: float = 100.0,
    step_minutes: int = 30,
    vol: float = 0.01,
    gap_prob: float = 0.0,
    gap_size: float = 0.15,
    extended: bool = True,
) -> list[tuple]:
    """Bar tuples ``(ticker, ts, open, high, low, close, volume, session)``.

    One bar every ``step_minutes`` inside each session; ``gap_prob`` inserts
    jumps between consecutive bars so a bar can open through a stop level.
    """
    bars = []
    price = start_price
    for _, pre, reg_o, reg_c, after in calendar_rows:
        t = pre if extended else reg_o
        end = after if extended else reg_c
        while t < end:
            session = "PRE" if t < reg_o else ("REGULAR" if t < reg_c else "AFTER")
            o = price
            if gap_prob and rng.random() < gap_prob:
                o = max(0.5, o * (1 + rng.choice([-1, 1]) * gap_size))
            c = max(0.5, o * (1 + rng.gauss(0, vol)))
            hi = max(o, c) * (1 + abs(rng.gauss(0, vol / 2)))
            lo = min(o, c) * (1 - abs(rng.gauss(0, vol / 2)))
            bars.append((ticker, t, round(o, 4), round(hi, 4), round(lo, 4), round(c, 4), rng.randrange(100, 10000), session))
            price = c
            t += timedelta(minutes=step_minutes)
    # rounding can break ordering of the extremes; restore it
    fixed = []
    for tk, ts, o, hi, lo, c, v, s in bars:
        fixed.append((tk, ts, o, max(hi, o, c), min(lo, o, c), c, v, s))
    return fixed
