/**
 * Token-level insertion diff for the corrected-spec view.
 *
 * Tokens of the corrected text that never appear in the original prompt
 * (multiset semantics, punctuation-insensitive) are flagged as added;
 * those are exactly the dimensions the user supplied during clarification.
 */

export interface DiffSegment {
  text: string;
  added: boolean;
}

function normalize(token: string): string {
  return token.replace(/^[([{'"]+|[)\]}.,;:'"]+$/g, "").toLowerCase();
}

export function diffTokens(original: string, corrected: string): DiffSegment[] {
  const available = new Map<string, number>();
  for (const token of original.split(/\s+/)) {
    const key = normalize(token);
    if (key) {
      available.set(key, (available.get(key) ?? 0) + 1);
    }
  }
  const segments: DiffSegment[] = [];
  for (const token of corrected.split(/\s+/)) {
    if (!token) continue;
    const key = normalize(token);
    const left = available.get(key) ?? 0;
    if (key && left > 0) {
      available.set(key, left - 1);
      segments.push({ text: token, added: false });
    } else {
      segments.push({ text: token, added: key.length > 0 });
    }
  }
  return segments;
}

export function addedTokens(segments: DiffSegment[]): string[] {
  return segments.filter((s) => s.added).map((s) => s.text);
}
