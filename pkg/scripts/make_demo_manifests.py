"""Regenerate the bundled demo manifests under src/scopeguard/data/manifests.

The output is committed; rerun only when changing the catalogue below.
"""

import itertools
import json
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "scopeguard" / "data" / "manifests"

VERBS = {
    "list": "List {plural} {where}.",
    "get": "Get details of a single {singular} {where}.",
    "create": "Create a new {singular} {where}.",
    "update": "Update the settings of an existing {singular} {where}.",
    "delete": "Delete a {singular} {where}.",
    "search": "Search {plural} by keyword {where}.",
}

CATALOGUE = {
    "wikipedia": (10, "on Wikipedia", None, [
        ("search_wikipedia", "Search Wikipedia for articles matching a free-text query."),
        ("get_article", "Fetch the full text of a Wikipedia article by title."),
        ("get_summary", "Return a short summary of a Wikipedia article."),
        ("summarize_article_for_query", "Summarize a Wikipedia article focusing on a specific question."),
        ("summarize_article_section", "Summarize one section of a Wikipedia article."),
        ("extract_key_facts", "Extract key facts and figures from a Wikipedia article."),
        ("get_related_topics", "Find topics related to a Wikipedia article through its links and categories."),
        ("get_sections", "List the section headings of a Wikipedia article."),
        ("get_links", "List the outgoing links found in a Wikipedia article."),
        ("get_coordinates", "Get the geographic coordinates attached to a Wikipedia article."),
    ]),
    "github": (90, "in a GitHub repository", "args", ["issue", "pull request", "branch", "commit", "release",
        "workflow run", "repository secret", "deploy key", "webhook", "collaborator", "label", "milestone",
        "gist", "code scanning alert", "discussion"]),
    "azure": (40, "in an Azure subscription", "args", ["resource group", "storage account", "key vault secret",
        "virtual machine", "app service plan", "cosmos database", "monitor alert"]),
    "jira": (32, "in a Jira project", None, ["issue", "sprint", "epic", "board", "comment", "worklog"]),
    "slack": (24, "in a Slack workspace", None, ["channel", "message", "reminder", "user group"]),
    "notion": (20, "in a Notion workspace", "params", ["page", "database", "block", "comment"]),
    "postgres": (16, "in a PostgreSQL database", None, ["table", "index", "schema", "role"]),
    "arxiv": (12, "on arXiv", None, [
        ("search_papers", "Search arXiv preprints by keyword, author or category."),
        ("get_paper", "Fetch metadata and the abstract of an arXiv preprint."),
        ("download_pdf", "Download the PDF of an arXiv preprint."),
        ("list_categories", "List the subject categories used to classify arXiv preprints."),
        ("get_latest", "Get the newest arXiv preprints posted in a category."),
        ("get_citations", "Find papers that cite a given arXiv preprint."),
        ("get_authors", "List the authors of an arXiv preprint with their affiliations."),
        ("get_versions", "List the revision history of an arXiv preprint."),
        ("export_bibtex", "Export a BibTeX citation entry for an arXiv preprint."),
        ("read_full_text", "Read the full text of an arXiv preprint as plain text."),
        ("compare_abstracts", "Compare the abstracts of two arXiv preprints side by side."),
        ("track_author", "Follow an author and return their new arXiv submissions."),
    ]),
    "pubmed": (18, "in PubMed", None, ["peer-reviewed article", "clinical trial", "mesh term"]),
    "google_calendar": (22, "in Google Calendar", None, ["event", "calendar", "attendee", "reminder rule"]),
    "stripe": (38, "in a Stripe account", "args", ["customer", "invoice", "subscription", "refund",
        "payment intent", "coupon", "payout"]),
    "kubernetes": (30, "in a Kubernetes cluster", None, ["pod", "deployment", "service", "namespace",
        "config map"]),
}

AZURE_EXTRA = [
    ("search_service_list", "List Azure AI Search services in a subscription."),
    ("subscription_list", "List the Azure subscriptions the signed-in account can access."),
]


def plural(word):
    return word + ("es" if word.endswith(("s", "sh", "ch")) else "s")


def arg_block(style, singular):
    key = singular.replace(" ", "_")
    if style == "args":
        return f"\nArgs:\n    {key}_id (str): identifier of the {singular}\n    dry_run (bool, optional): validate only"
    if style == "params":
        return f"\n\nParameters:\n- {key}_id (string): identifier of the {singular}\n\nReturns a JSON object."
    return ""


def build(server, size, where, style, spec):
    tools = []
    if spec and isinstance(spec[0], tuple):
        tools = [{"name": n, "description": d} for n, d in spec]
    else:
        extra = AZURE_EXTRA if server == "azure" else []
        tools = [{"name": n, "description": d} for n, d in extra]
        for i, (resource, verb) in enumerate(itertools.product(spec, VERBS)):
            if len(tools) >= size:
                break
            name = f"{verb}_{resource.replace(' ', '_').replace('-', '_')}"
            if verb in ("list", "search"):
                name += "s"
            desc = VERBS[verb].format(plural=plural(resource), singular=resource, where=where)
            if style and i % 3 == 0:
                desc += arg_block(style, resource)
            tools.append({"name": name, "description": desc})
    assert len(tools) == size, (server, len(tools), size)
    return {"server_id": server, "tools": sorted(tools, key=lambda t: t["name"]), "language_tag": "en"}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    total = 0
    for server, (size, where, style, spec) in CATALOGUE.items():
        doc = build(server, size, where, style, spec)
        (OUT / f"{server}.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
        total += size
    print(f"wrote {len(CATALOGUE)} manifests, {total} tools")


if __name__ == "__main__":
    main()
