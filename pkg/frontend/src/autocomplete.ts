/** Vocabulary-restricted token completion: the entry box only ever offers
 * tokens the service reported in /api/meta. */

export function completeTokens(
  vocabulary: string[],
  query: string,
  exclude: string[] = [],
  limit = 8,
): string[] {
  const q = query.trim().toLowerCase();
  if (q === '') return [];
  const excluded = new Set(exclude);
  const prefix: string[] = [];
  const infix: string[] = [];
  for (const token of vocabulary) {
    if (excluded.has(token)) continue;
    if (token.startsWith(q)) prefix.push(token);
    else if (token.includes(q)) infix.push(token);
    if (prefix.length >= limit) break;
  }
  return [...prefix, ...infix].slice(0, limit);
}
