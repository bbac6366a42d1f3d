/**
 * Parameterized rule forms: fill a template body into policy DSL text.
 *
 * Forms generate DSL, never a parallel policy representation: the preview
 * shown to the operator is exactly the text submitted, and the server
 * re-parses it on PUT, so the form layer cannot diverge from the language.
 *
 * Slot syntax mirrors the server catalog: `${name}` inserts the raw value,
 * `${name@string}` inserts it as a quoted string literal.
 */

import type { RuleTemplate } from "./api.js";

const SLOT = /\$\{(\w+)(@string)?\}/g;

export function renderTemplate(template: RuleTemplate, values: Record<string, string>): string {
  const filled: Record<string, string> = {};
  for (const param of template.params) {
    const value = values[param.name] ?? param.default ?? "";
    if (value === "") {
      throw new Error(`parameter '${param.label}' is required`);
    }
    if (param.kind === "choice" && param.choices && !param.choices.includes(value)) {
      throw new Error(`parameter '${param.label}' must be one of ${param.choices.join(", ")}`);
    }
    filled[param.name] = value;
  }
  const body = template.body.replace(SLOT, (_match, name: string, asString?: string) => {
    const value = filled[name];
    if (value === undefined) {
      throw new Error(`template body references unknown parameter '${name}'`);
    }
    return asString ? JSON.stringify(value) : value;
  });
  return body + "\n";
}

/** Append a rendered rule to existing policy text, keeping a blank separator line. */
export function appendRule(policyText: string, ruleText: string): string {
  const trimmed = policyText.replace(/\s+$/, "");
  if (!trimmed) return ruleText;
  return `${trimmed}\n\n${ruleText}`;
}
