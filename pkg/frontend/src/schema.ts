import { z } from 'zod';

// Client-side mirror of the service's POST /rankings body. The recorded
// OpenAPI schema lives in fixtures/rankings_schema.json; the schema test
// keeps this definition aligned with it. The client is allowed to be
// stricter than the server (fixed length, finite numbers), never looser.
export const rankingSubmissionSchema = z
  .object({
    group_id: z.string().min(1),
    annotator_id: z.string().min(1),
    ranks: z.array(z.number().finite()).min(1),
  })
  .strict();

export type RankingSubmission = z.infer<typeof rankingSubmissionSchema>;

export function buildSubmission(
  groupId: string,
  annotatorId: string,
  ranks: number[],
): RankingSubmission {
  return rankingSubmissionSchema.parse({
    group_id: groupId,
    annotator_id: annotatorId,
    ranks,
  });
}
